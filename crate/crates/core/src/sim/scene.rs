//! Procedural patch content for synthetic scene classes.
//!
//! A prototype is a parametric texture (block grid, stripes, step edge) or a
//! smooth low-gradient ramp. Rendering applies a per-frame integer shift and
//! per-pixel noise, both drawn from a seeded generator.

use rand::Rng;

use crate::seed::SimRng;

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// `cells`×`cells` grid of intensities, periodic.
    Blocks { cells: usize, levels: Vec<u8> },
    /// Square-wave grating along direction `(cos, sin)`; `period` is a
    /// fraction of the patch side.
    Stripes {
        cos: f64,
        sin: f64,
        period: f64,
        phase: f64,
        duty: f64,
        lo: u8,
        hi: u8,
    },
    /// Half-plane split through the patch, offset as a fraction of the side.
    Step {
        cos: f64,
        sin: f64,
        offset: f64,
        lo: u8,
        hi: u8,
    },
    /// Linear ramp; slopes are in intensity levels per pixel.
    Ramp { base: f64, slope_x: f64, slope_y: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub primitive: Primitive,
    /// Per-pixel uniform noise amplitude in intensity levels.
    pub noise: u8,
}

impl Prototype {
    pub fn is_flat(&self) -> bool {
        matches!(self.primitive, Primitive::Ramp { .. })
    }

    /// Noise-free intensity at pixel `(x, y)` of an `n`-pixel patch.
    fn sample(&self, x: f64, y: f64, n: usize) -> f64 {
        let nf = n as f64;
        let (u, v) = ((x + 0.5) / nf, (y + 0.5) / nf);
        match &self.primitive {
            Primitive::Blocks { cells, levels } => {
                let cx = ((u * *cells as f64).floor() as i64).rem_euclid(*cells as i64) as usize;
                let cy = ((v * *cells as f64).floor() as i64).rem_euclid(*cells as i64) as usize;
                f64::from(levels[cy * cells + cx])
            }
            Primitive::Stripes {
                cos,
                sin,
                period,
                phase,
                duty,
                lo,
                hi,
            } => {
                let t = (u * cos + v * sin) / period + phase;
                if t - t.floor() < *duty {
                    f64::from(*hi)
                } else {
                    f64::from(*lo)
                }
            }
            Primitive::Step {
                cos,
                sin,
                offset,
                lo,
                hi,
            } => {
                if (u - 0.5) * cos + (v - 0.5) * sin > *offset {
                    f64::from(*hi)
                } else {
                    f64::from(*lo)
                }
            }
            Primitive::Ramp {
                base,
                slope_x,
                slope_y,
            } => base + slope_x * (x - nf / 2.0) + slope_y * (y - nf / 2.0),
        }
    }

    /// Renders an `n`×`n` patch shifted by `(dx, dy)` pixels, with noise from `rng`.
    pub fn render(&self, n: usize, dx: i32, dy: i32, rng: &mut SimRng) -> Vec<u8> {
        let mut out = Vec::with_capacity(n * n);
        let amp = i32::from(self.noise);
        for y in 0..n {
            for x in 0..n {
                let base = self.sample(x as f64 + f64::from(dx), y as f64 + f64::from(dy), n);
                let jitter = if amp > 0 { rng.random_range(-amp..=amp) } else { 0 };
                out.push((base.round() as i32 + jitter).clamp(0, 255) as u8);
            }
        }
        out
    }

    /// Noise-free, unshifted render used for separation checks.
    pub fn canonical(&self, n: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(n * n);
        for y in 0..n {
            for x in 0..n {
                out.push(self.sample(x as f64, y as f64, n).round().clamp(0.0, 255.0) as u8);
            }
        }
        out
    }
}

fn contrast_pair(rng: &mut SimRng) -> (u8, u8) {
    (rng.random_range(5..=45), rng.random_range(175..=250))
}

/// A random high-contrast texture.
pub fn random_textured(rng: &mut SimRng, noise: u8) -> Prototype {
    let kind = rng.random_range(0..10);
    let primitive = if kind < 5 {
        let cells = 8;
        let on = rng.random_range(0.25..0.45);
        let (lo, hi) = contrast_pair(rng);
        let levels = (0..cells * cells)
            .map(|_| {
                if rng.random_bool(on) {
                    hi.saturating_sub(rng.random_range(0..20))
                } else {
                    lo + rng.random_range(0..10)
                }
            })
            .collect();
        Primitive::Blocks { cells, levels }
    } else if kind < 8 {
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let (lo, hi) = contrast_pair(rng);
        Primitive::Stripes {
            cos: angle.cos(),
            sin: angle.sin(),
            period: rng.random_range(0.3..0.6),
            phase: rng.random_range(0.0..1.0),
            duty: rng.random_range(0.3..0.5),
            lo,
            hi,
        }
    } else {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let (lo, hi) = contrast_pair(rng);
        Primitive::Step {
            cos: angle.cos(),
            sin: angle.sin(),
            offset: rng.random_range(-0.15..0.15),
            lo,
            hi,
        }
    };
    Prototype { primitive, noise }
}

/// A smooth ramp whose edge score stays well below the default threshold.
pub fn random_flat(rng: &mut SimRng) -> Prototype {
    Prototype {
        primitive: Primitive::Ramp {
            base: rng.random_range(40.0..215.0),
            slope_x: rng.random_range(-0.4..0.4),
            slope_y: rng.random_range(-0.4..0.4),
        },
        noise: 1,
    }
}

/// A low-contrast texture; `contrast` is the level difference between phases.
pub fn faint_textured(rng: &mut SimRng, contrast: u8) -> Prototype {
    let base: u8 = rng.random_range(60..=180);
    let mut p = random_textured(rng, 1);
    match &mut p.primitive {
        Primitive::Blocks { levels, .. } => {
            let hi_cut = levels.iter().copied().max().unwrap_or(0) / 2;
            for l in levels.iter_mut() {
                *l = if *l > hi_cut { base.saturating_add(contrast) } else { base };
            }
        }
        Primitive::Stripes { lo, hi, .. } | Primitive::Step { lo, hi, .. } => {
            *lo = base;
            *hi = base.saturating_add(contrast);
        }
        Primitive::Ramp { .. } => {}
    }
    p
}
