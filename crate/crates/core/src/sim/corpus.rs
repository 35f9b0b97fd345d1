//! Calibration frames for the edge threshold.
//!
//! The corpus mixes three kinds of patch: smooth ramps, high-contrast
//! textures, and faint textures whose contrast straddles the default edge
//! threshold. The mixture is what a game frame looks like to the pruner:
//! sky, UI panels and fog next to detailed geometry.

use rand::Rng;

use super::scene::{faint_textured, random_flat, random_textured, Prototype};
use crate::pixels::Frame;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusMix {
    pub flat: f64,
    pub faint: f64,
    /// Faint-texture contrast range in intensity levels, inclusive.
    pub faint_contrast: (u8, u8),
}

impl Default for CorpusMix {
    fn default() -> Self {
        CorpusMix {
            flat: 0.35,
            faint: 0.35,
            faint_contrast: (2, 14),
        }
    }
}

pub const CORPUS_SIDE: usize = 96;
pub const CORPUS_PATCH: usize = 32;

fn draw_patch(rng: &mut seed::SimRng, mix: &CorpusMix) -> Prototype {
    let u: f64 = rng.random();
    if u < mix.flat {
        random_flat(rng)
    } else if u < mix.flat + mix.faint {
        let c = rng.random_range(mix.faint_contrast.0..=mix.faint_contrast.1);
        faint_textured(rng, c)
    } else {
        random_textured(rng, 3)
    }
}

fn compose(cols: usize, rows: usize, index: u32, mut pick: impl FnMut(usize) -> (Prototype, seed::SimRng)) -> Frame {
    let n = CORPUS_PATCH;
    let width = cols * n;
    let mut luma = vec![0u8; width * rows * n];
    for r in 0..rows {
        for c in 0..cols {
            let (proto, mut noise) = pick(r * cols + c);
            let px = proto.render(n, 0, 0, &mut noise);
            for y in 0..n {
                let dst = (r * n + y) * width + c * n;
                luma[dst..dst + n].copy_from_slice(&px[y * n..(y + 1) * n]);
            }
        }
    }
    Frame::new(width, rows * n, luma, index).expect("valid corpus geometry")
}

/// `frames` frames of `CORPUS_SIDE`² pixels drawn from `mix`.
pub fn calibration_corpus(seed: u64, frames: u32, mix: &CorpusMix) -> Vec<Frame> {
    let cells = CORPUS_SIDE / CORPUS_PATCH;
    (0..frames)
        .map(|f| {
            compose(cells, cells, f, |slot| {
                let key = (u64::from(f) << 16) | slot as u64;
                let mut rng = seed::rng(seed, "corpus", key);
                let proto = draw_patch(&mut rng, mix);
                (proto, rng)
            })
        })
        .collect()
}

/// A 4×2-patch frame alternating high-contrast textures and smooth ramps in a
/// checkerboard; textured slots are those with even `row + col`.
pub fn mixed_frame(seed: u64) -> Frame {
    compose(4, 2, 0, |slot| {
        let (r, c) = (slot / 4, slot % 4);
        let mut rng = seed::rng(seed, "mixed", slot as u64);
        let proto = if (r + c) % 2 == 0 {
            random_textured(&mut rng, 3)
        } else {
            random_flat(&mut rng)
        };
        (proto, rng)
    })
}
