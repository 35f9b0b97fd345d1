//! Online per-frame model selection and the segment-level fine-tune rule.
//!
//! For every frame, patches whose edge score exceeds `lambda` are encoded
//! and matched against the lookup table. A match with similarity above
//! `beta` casts one vote for its model; the frame uses the plurality winner.
//! A frame is flagged for fine-tuning when the winning vote count falls below
//! `alpha` times the number of retained patches, and a segment is fine-tuned
//! when more than `alpha` of its frames are flagged.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::edges;
use crate::encoder::{Embedding, PatchEncoder};
use crate::error::{Error, Result};
use crate::pixels::{partition, Frame, SegmentId};
use crate::clustering::{KMeansConfig, DEFAULT_MAX_ITERS, DEFAULT_RESTARTS};
use crate::zoo::{build_entry_with, query_patch, LookupTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerParams {
    /// Edge threshold.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Similarity threshold a match must exceed to vote.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Voting / segment threshold.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_lambda() -> f64 {
    10.0
}
fn default_beta() -> f64 {
    0.8
}
fn default_alpha() -> f64 {
    0.65
}

impl Default for SchedulerParams {
    fn default() -> Self {
        SchedulerParams {
            lambda: default_lambda(),
            beta: default_beta(),
            alpha: default_alpha(),
        }
    }
}

impl SchedulerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config(format!("alpha must be in (0, 1], got {}", self.alpha)));
        }
        if !(self.beta <= 1.0) {
            return Err(Error::config(format!("beta must be at most 1, got {}", self.beta)));
        }
        if self.lambda.is_nan() {
            return Err(Error::config("lambda must be a number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameDecision {
    pub frame_index: u32,
    /// Entry index of the model used for this frame.
    pub chosen: Option<usize>,
    pub votes: BTreeMap<usize, u32>,
    pub count_p: u32,
    pub needs_fine_tune: bool,
}

impl FrameDecision {
    pub fn max_vote(&self) -> u32 {
        self.votes.values().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentDecision {
    pub frames_flagged: u32,
    pub total_frames: u32,
    pub fine_tune_segment: bool,
}

/// Highest vote count; ties go to the lowest model index.
pub fn plurality_vote(votes: &BTreeMap<usize, u32>) -> Result<usize> {
    let mut best: Option<(usize, u32)> = None;
    for (&model, &count) in votes {
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((model, count));
        }
    }
    best.map(|(m, _)| m)
        .ok_or_else(|| Error::invalid("plurality vote over an empty vote map"))
}

/// Votes over already-encoded retained patches.
///
/// `previous` is the model used by the preceding frame; it is carried over
/// when no patch survives pruning.
pub fn decide_frame(
    frame_index: u32,
    retained: &[Embedding],
    table: &LookupTable,
    params: &SchedulerParams,
    previous: Option<usize>,
) -> Result<FrameDecision> {
    let count_p = retained.len() as u32;
    let mut votes = BTreeMap::new();
    if !table.is_empty() {
        for emb in retained {
            let hit = query_patch(emb, table)?;
            if hit.similarity > params.beta {
                *votes.entry(hit.model_index).or_insert(0) += 1;
            }
        }
    }
    if count_p == 0 {
        return Ok(FrameDecision {
            frame_index,
            chosen: previous,
            votes,
            count_p,
            needs_fine_tune: false,
        });
    }
    let chosen = plurality_vote(&votes).ok();
    let max_vote = votes.values().copied().max().unwrap_or(0);
    Ok(FrameDecision {
        frame_index,
        chosen,
        needs_fine_tune: f64::from(max_vote) < params.alpha * f64::from(count_p),
        votes,
        count_p,
    })
}

/// Knobs for fitting a new model when a segment is fine-tuned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitParams {
    pub seed: u64,
    pub model_size_bytes: u64,
    pub max_iters: usize,
    pub restarts: usize,
}

impl FitParams {
    pub fn new(seed: u64, model_size_bytes: u64) -> Self {
        FitParams {
            seed,
            model_size_bytes,
            max_iters: DEFAULT_MAX_ITERS,
            restarts: DEFAULT_RESTARTS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SegmentOutcome {
    pub decision: SegmentDecision,
    pub frames: Vec<FrameDecision>,
    /// The extended table when a new entry was built.
    pub table: Option<LookupTable>,
    pub warning: Option<String>,
}

/// Frame scheduler bound to an encoder and patch geometry.
pub struct Scheduler<'a> {
    pub params: SchedulerParams,
    pub encoder: &'a dyn PatchEncoder,
    pub patch_size: usize,
}

impl<'a> Scheduler<'a> {
    pub fn new(params: SchedulerParams, encoder: &'a dyn PatchEncoder, patch_size: usize) -> Self {
        Scheduler {
            params,
            encoder,
            patch_size,
        }
    }

    /// Embeddings of the patches of `frame` whose edge score exceeds lambda.
    pub fn retained_embeddings(&self, frame: &Frame) -> Result<Vec<Embedding>> {
        partition(frame, self.patch_size)?
            .iter()
            .filter(|p| edges::retained(p, self.params.lambda))
            .map(|p| self.encoder.encode(p))
            .collect()
    }

    pub fn schedule_frame(&self, frame: &Frame, table: &LookupTable, previous: Option<usize>) -> Result<FrameDecision> {
        let retained = self.retained_embeddings(frame)?;
        decide_frame(frame.index(), &retained, table, &self.params, previous)
    }

    /// Schedules every frame against `table` as it stands at segment start and
    /// fits a new entry when more than `alpha` of the frames are flagged.
    pub fn schedule_segment(
        &self,
        frames: &[Frame],
        table: &LookupTable,
        fit: FitParams,
        segment: SegmentId,
        previous: Option<usize>,
    ) -> Result<SegmentOutcome> {
        if frames.is_empty() {
            return Err(Error::invalid("segment has no frames"));
        }
        let mut retained = Vec::with_capacity(frames.len());
        for f in frames {
            retained.push(self.retained_embeddings(f)?);
        }
        let indices: Vec<u32> = frames.iter().map(Frame::index).collect();
        schedule_encoded_segment(&indices, &retained, table, &self.params, fit, segment, previous)
    }
}

/// Segment scheduling over pre-encoded frames (`retained[i]` belongs to `frame_indices[i]`).
pub fn schedule_encoded_segment(
    frame_indices: &[u32],
    retained: &[Vec<Embedding>],
    table: &LookupTable,
    params: &SchedulerParams,
    fit: FitParams,
    segment: SegmentId,
    mut previous: Option<usize>,
) -> Result<SegmentOutcome> {
    if retained.is_empty() {
        return Err(Error::invalid("segment has no frames"));
    }
    let mut frames = Vec::with_capacity(retained.len());
    for (&idx, embs) in frame_indices.iter().zip(retained) {
        let d = decide_frame(idx, embs, table, params, previous)?;
        previous = d.chosen.or(previous);
        frames.push(d);
    }
    let flagged = frames.iter().filter(|d| d.needs_fine_tune).count() as u32;
    let total = frames.len() as u32;
    let decision = SegmentDecision {
        frames_flagged: flagged,
        total_frames: total,
        fine_tune_segment: f64::from(flagged) > params.alpha * f64::from(total),
    };
    let mut outcome = SegmentOutcome {
        decision,
        frames,
        table: None,
        warning: None,
    };
    if decision.fine_tune_segment {
        let pool: Vec<Embedding> = retained.iter().flatten().cloned().collect();
        let mut next = table.clone();
        let kcfg = KMeansConfig {
            k: table.k(),
            seed: fit.seed,
            max_iters: fit.max_iters,
            restarts: fit.restarts,
        };
        match build_entry_with(&mut next, &pool, &kcfg, fit.model_size_bytes, Some(segment.clone())) {
            Ok(_) => outcome.table = Some(next),
            Err(Error::NoComplexPatches) => {
                outcome.warning = Some(format!(
                    "segment {}#{} flagged for fine-tuning but has no complex patches; skipped",
                    segment.stream, segment.segment_ordinal
                ));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(outcome)
}

pub fn schedule_frame(
    frame: &Frame,
    table: &LookupTable,
    params: &SchedulerParams,
    encoder: &dyn PatchEncoder,
    patch_size: usize,
    previous: Option<usize>,
) -> Result<FrameDecision> {
    Scheduler::new(*params, encoder, patch_size).schedule_frame(frame, table, previous)
}

/// One line of the decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub stream: String,
    pub segment: u32,
    pub frame: u32,
    pub chosen: Option<u32>,
    pub count_p: u32,
    pub max_vote: u32,
    pub needs_fine_tune: bool,
}

impl DecisionRecord {
    pub fn new(stream: &str, segment: u32, d: &FrameDecision, table: &LookupTable) -> Self {
        DecisionRecord {
            stream: stream.to_string(),
            segment,
            frame: d.frame_index,
            chosen: d.chosen.map(|j| table.entries()[j].model.id),
            count_p: d.count_p,
            max_vote: d.max_vote(),
            needs_fine_tune: d.needs_fine_tune,
        }
    }
}
