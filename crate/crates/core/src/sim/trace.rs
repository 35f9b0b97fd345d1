//! Trace specifications and deterministic frame synthesis.
//!
//! A trace declares scene classes and streams of segments. Each class owns a
//! few textured prototypes plus one smooth ramp; classes that name the same
//! `family` additionally share that family's motif prototypes, so their
//! fitted models resemble each other without being interchangeable.
//! Textured prototypes are drawn by rejection sampling so that no two of
//! them (outside a shared motif) exceed `max_prototype_similarity` under the
//! built-in encoder.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::{random_flat, random_textured, Prototype};
use crate::encoder::{cosine_similarity, default_encode, Embedding};
use crate::error::{Error, Result};
use crate::pixels::{Frame, PatchView, SegmentId};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArrivalOrder {
    /// Segment `r` of every stream, in declaration order, before segment `r + 1`.
    #[default]
    RoundRobin,
    /// Like round-robin, but each round visits streams in a seeded random order.
    ShuffledRounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    #[serde(default)]
    pub family: Option<String>,
    #[serde(default = "default_prototypes")]
    pub prototypes: usize,
    #[serde(default = "default_flat_fraction")]
    pub flat_fraction: f64,
    /// Maximum per-frame shift in pixels.
    #[serde(default = "default_drift")]
    pub drift: u32,
    #[serde(default = "default_noise")]
    pub noise: u8,
}

fn default_prototypes() -> usize {
    3
}
fn default_flat_fraction() -> f64 {
    0.1
}
fn default_drift() -> u32 {
    1
}
fn default_noise() -> u8 {
    3
}

impl ClassSpec {
    pub fn new(name: impl Into<String>, family: Option<String>) -> Self {
        ClassSpec {
            name: name.into(),
            family,
            prototypes: default_prototypes(),
            flat_fraction: default_flat_fraction(),
            drift: default_drift(),
            noise: default_noise(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub name: String,
    pub segments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSpec {
    pub seed: u64,
    #[serde(default = "default_side")]
    pub width: usize,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_patch")]
    pub patch_size: usize,
    #[serde(default = "default_frames")]
    pub frames_per_segment: u32,
    #[serde(default = "default_segment_seconds")]
    pub segment_seconds: f64,
    #[serde(default)]
    pub order: ArrivalOrder,
    #[serde(default = "default_motifs")]
    pub family_motifs: usize,
    #[serde(default = "default_separation")]
    pub max_prototype_similarity: f64,
    pub classes: Vec<ClassSpec>,
    pub streams: Vec<StreamSpec>,
}

fn default_side() -> usize {
    96
}
fn default_patch() -> usize {
    32
}
fn default_frames() -> u32 {
    300
}
fn default_segment_seconds() -> f64 {
    10.0
}
fn default_motifs() -> usize {
    2
}
fn default_separation() -> f64 {
    0.55
}

impl TraceSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: TraceSpec = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read trace spec {}: {e}", path.display())))?;
        TraceSpec::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("trace spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 8 {
            return Err(Error::config("trace patch_size must be at least 8"));
        }
        if self.width < self.patch_size || self.height < self.patch_size {
            return Err(Error::config("frame must hold at least one patch"));
        }
        if self.frames_per_segment == 0 {
            return Err(Error::config("frames_per_segment must be positive"));
        }
        if !(self.segment_seconds > 0.0) {
            return Err(Error::config("segment_seconds must be positive"));
        }
        if !(0.0..=1.0).contains(&self.max_prototype_similarity) {
            return Err(Error::config("max_prototype_similarity must be in [0, 1]"));
        }
        let mut names = BTreeMap::new();
        for c in &self.classes {
            if names.insert(c.name.as_str(), ()).is_some() {
                return Err(Error::config(format!("duplicate scene class {:?}", c.name)));
            }
            if !(0.0..1.0).contains(&c.flat_fraction) {
                return Err(Error::config(format!("class {:?}: flat_fraction must be in [0, 1)", c.name)));
            }
            let motifs = if c.family.is_some() { self.family_motifs } else { 0 };
            if c.prototypes + motifs == 0 {
                return Err(Error::config(format!("class {:?} has no textured prototypes", c.name)));
            }
        }
        if self.streams.is_empty() {
            return Err(Error::config("trace declares no streams"));
        }
        for s in &self.streams {
            if s.segments.is_empty() {
                return Err(Error::config(format!("stream {:?} has no segments", s.name)));
            }
            for seg in &s.segments {
                if !names.contains_key(seg.as_str()) {
                    return Err(Error::config(format!("unknown scene class {seg:?} in stream {:?}", s.name)));
                }
            }
        }
        Ok(())
    }

    pub fn total_segments(&self) -> usize {
        self.streams.iter().map(|s| s.segments.len()).sum()
    }
}

/// A resolved scene class.
#[derive(Debug, Clone)]
pub struct SceneClass {
    pub id: usize,
    pub name: String,
    /// Own prototypes followed by the family motifs.
    pub textured: Vec<Prototype>,
    pub flat: Prototype,
    pub flat_fraction: f64,
    pub drift: u32,
}

#[derive(Debug, Clone)]
pub struct SimSegment {
    pub id: SegmentId,
    pub class: usize,
}

#[derive(Debug, Clone)]
pub struct SimStream {
    pub name: String,
    pub segments: Vec<SimSegment>,
}

/// Which half of a segment's footage a frame belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Frames used for scheduling and fine-tuning.
    Train,
    /// Held-out frames used to measure retrieval and delivery.
    Validate,
}

#[derive(Debug, Clone)]
pub struct SimTrace {
    pub spec: TraceSpec,
    pub classes: Vec<SceneClass>,
    pub streams: Vec<SimStream>,
}

const MAX_DRAWS: u64 = 5000;

struct PrototypeBank {
    seed: u64,
    size: usize,
    limit: f64,
    accepted: Vec<Embedding>,
    draws: u64,
}

impl PrototypeBank {
    fn draw(&mut self, noise: u8) -> Result<Prototype> {
        for _ in 0..MAX_DRAWS {
            let mut rng = seed::rng(self.seed, "prototype", self.draws);
            self.draws += 1;
            let candidate = random_textured(&mut rng, noise);
            let patch = PatchView::from_pixels(self.size, candidate.canonical(self.size))?;
            let emb = default_encode(&patch)?;
            let clash = self
                .accepted
                .iter()
                .any(|a| cosine_similarity(a, &emb).unwrap_or(1.0) > self.limit);
            if !clash {
                self.accepted.push(emb);
                return Ok(candidate);
            }
        }
        Err(Error::config(format!(
            "could not draw {} mutually separated prototypes below similarity {}",
            self.accepted.len() + 1,
            self.limit
        )))
    }
}

/// Resolves a trace spec into scene classes and streams.
pub fn generate_trace(spec: &TraceSpec) -> Result<SimTrace> {
    spec.validate()?;
    let mut bank = PrototypeBank {
        seed: seed::derive(spec.seed, "prototypes", 0),
        size: spec.patch_size,
        limit: spec.max_prototype_similarity,
        accepted: Vec::new(),
        draws: 0,
    };
    let mut families: BTreeMap<String, Vec<Prototype>> = BTreeMap::new();
    let mut classes = Vec::with_capacity(spec.classes.len());
    for (id, c) in spec.classes.iter().enumerate() {
        let mut textured = Vec::new();
        for _ in 0..c.prototypes {
            textured.push(bank.draw(c.noise)?);
        }
        if let Some(fam) = &c.family {
            if !families.contains_key(fam) {
                let mut motifs = Vec::with_capacity(spec.family_motifs);
                for _ in 0..spec.family_motifs {
                    motifs.push(bank.draw(c.noise)?);
                }
                families.insert(fam.clone(), motifs);
            }
            textured.extend(families[fam].iter().cloned());
        }
        let flat = random_flat(&mut seed::rng(spec.seed, "flat", id as u64));
        classes.push(SceneClass {
            id,
            name: c.name.clone(),
            textured,
            flat,
            flat_fraction: c.flat_fraction,
            drift: c.drift,
        });
    }
    let by_name: BTreeMap<&str, usize> = classes.iter().map(|c| (c.name.as_str(), c.id)).collect();
    let streams = spec
        .streams
        .iter()
        .map(|s| {
            let segments = s
                .segments
                .iter()
                .enumerate()
                .map(|(i, name)| {
                    Ok(SimSegment {
                        id: SegmentId::new(s.name.clone(), i as u32, spec.frames_per_segment)?,
                        class: by_name[name.as_str()],
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SimStream {
                name: s.name.clone(),
                segments,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimTrace {
        spec: spec.clone(),
        classes,
        streams,
    })
}

fn slot_key(stream: usize, segment: usize, phase: Phase, frame: u32, slot: usize) -> u64 {
    let phase_bit = match phase {
        Phase::Train => 0u64,
        Phase::Validate => 1u64,
    };
    seed::splitmix64(
        (stream as u64) << 48
            ^ (segment as u64) << 36
            ^ phase_bit << 35
            ^ u64::from(frame) << 16
            ^ slot as u64,
    )
}

impl SimTrace {
    pub fn segment(&self, stream: usize, segment: usize) -> &SimSegment {
        &self.streams[stream].segments[segment]
    }

    /// Stream-wide frame index of frame `i` of a segment.
    pub fn frame_index(&self, segment: usize, i: u32) -> u32 {
        segment as u32 * self.spec.frames_per_segment + i
    }

    /// Synthesizes frame `i` of a segment. Pure in `(spec, stream, segment, phase, i)`.
    pub fn render_frame(&self, stream: usize, segment: usize, phase: Phase, i: u32) -> Frame {
        let spec = &self.spec;
        let class = &self.classes[self.segment(stream, segment).class];
        let n = spec.patch_size;
        let (cols, rows) = (spec.width / n, spec.height / n);
        let mut luma = vec![0u8; spec.width * spec.height];

        let mut frame_rng = seed::rng(spec.seed, "frame", slot_key(stream, segment, phase, i, usize::MAX >> 1));
        let d = class.drift as i32;
        let (dx, dy) = if d > 0 {
            (frame_rng.random_range(-d..=d), frame_rng.random_range(-d..=d))
        } else {
            (0, 0)
        };

        for r in 0..rows {
            for c in 0..cols {
                let slot = r * cols + c;
                let mut rng = seed::rng(spec.seed, "slot", slot_key(stream, segment, phase, i, slot));
                let proto = if rng.random_bool(class.flat_fraction) {
                    &class.flat
                } else {
                    &class.textured[rng.random_range(0..class.textured.len())]
                };
                let px = proto.render(n, dx, dy, &mut rng);
                for y in 0..n {
                    let dst = (r * n + y) * spec.width + c * n;
                    luma[dst..dst + n].copy_from_slice(&px[y * n..(y + 1) * n]);
                }
            }
        }
        // Uncovered border pixels (dimensions not a multiple of the patch size) stay black.
        Frame::new(spec.width, spec.height, luma, self.frame_index(segment, i)).expect("valid frame geometry")
    }

    pub fn segment_frames(&self, stream: usize, segment: usize, phase: Phase) -> Vec<Frame> {
        (0..self.spec.frames_per_segment)
            .map(|i| self.render_frame(stream, segment, phase, i))
            .collect()
    }

    /// `(stream, segment)` pairs in arrival order.
    pub fn arrival_order(&self) -> Vec<(usize, usize)> {
        let rounds = self.streams.iter().map(|s| s.segments.len()).max().unwrap_or(0);
        let mut out = Vec::with_capacity(self.spec.total_segments());
        for round in 0..rounds {
            let mut visit: Vec<usize> = (0..self.streams.len())
                .filter(|&s| round < self.streams[s].segments.len())
                .collect();
            if self.spec.order == ArrivalOrder::ShuffledRounds {
                visit.shuffle(&mut seed::rng(self.spec.seed, "arrival", round as u64));
            }
            out.extend(visit.into_iter().map(|s| (s, round)));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> TraceSpec {
        TraceSpec::from_toml_str(
            r#"
seed = 11
frames_per_segment = 4
[[classes]]
name = "a"
[[classes]]
name = "b"
family = "f"
[[streams]]
name = "s0"
segments = ["a", "b"]
[[streams]]
name = "s1"
segments = ["b"]
"#,
        )
        .unwrap()
    }

    #[test]
    fn unknown_class_is_a_config_error() {
        let mut s = spec();
        s.streams[0].segments.push("zzz".into());
        let err = s.validate().unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("unknown scene class"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let t = generate_trace(&spec()).unwrap();
        let again = generate_trace(&spec()).unwrap();
        let a = t.render_frame(0, 1, Phase::Train, 2);
        assert_eq!(a, again.render_frame(0, 1, Phase::Train, 2));
        assert_ne!(a, t.render_frame(0, 1, Phase::Validate, 2));
        assert_eq!(a.index(), 4 + 2);
    }

    #[test]
    fn family_classes_include_motifs() {
        let t = generate_trace(&spec()).unwrap();
        assert_eq!(t.classes[0].textured.len(), 3);
        assert_eq!(t.classes[1].textured.len(), 5);
    }

    #[test]
    fn round_robin_order() {
        let t = generate_trace(&spec()).unwrap();
        assert_eq!(t.arrival_order(), vec![(0, 0), (1, 0), (0, 1)]);
    }

    #[test]
    fn shuffled_rounds_keep_stream_order() {
        let mut s = spec();
        s.order = ArrivalOrder::ShuffledRounds;
        let t = generate_trace(&s).unwrap();
        let order = t.arrival_order();
        assert_eq!(order.len(), 3);
        assert_eq!(order[2], (0, 1));
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let s = spec();
        assert_eq!(TraceSpec::from_toml_str(&s.to_toml_string()).unwrap(), s);
    }
}
