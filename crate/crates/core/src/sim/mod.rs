//! Synthetic traces, the quality oracle and the end-to-end experiment harness.

pub mod corpus;
pub mod experiment;
pub mod report;
pub mod scene;
pub mod trace;

use serde::{Deserialize, Serialize};

use crate::encoder::{cosine_unchecked, Embedding};
use crate::error::{Error, Result};
use crate::zoo::ZooEntry;

pub use experiment::{
    k_ablation, random_trace_spec, run_experiment, simulate_spec, train_zoo, Experiment, Policy, SimReport, StreamReport,
    Training,
};
pub use trace::{generate_trace, Phase, SimTrace, TraceSpec};

/// Stand-in for measuring a trained model: quality in dB as a function of how
/// well the patch matches the model's closest center.
///
/// The constants are calibration values, not measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QualityOracle {
    pub q_generic: f64,
    pub gain: f64,
    /// dB lost per unit of `1 - similarity`.
    pub decay: f64,
}

impl Default for QualityOracle {
    fn default() -> Self {
        QualityOracle {
            q_generic: 27.0,
            gain: 2.5,
            decay: 12.5,
        }
    }
}

/// Largest shortfall below the generic quality the oracle will report.
pub const MAX_LOSS_DB: f64 = 5.0;

impl QualityOracle {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.q_generic, self.gain, self.decay].iter().all(|v| v.is_finite());
        if !finite || self.gain < 0.0 || self.decay < 0.0 {
            return Err(Error::config("oracle constants must be finite and gain/decay non-negative"));
        }
        Ok(())
    }

    pub fn generic(&self) -> f64 {
        self.q_generic
    }

    /// Quality given the best center similarity.
    pub fn from_similarity(&self, similarity: f64) -> f64 {
        let q = self.q_generic + self.gain - self.decay * (1.0 - similarity);
        q.clamp(self.q_generic - MAX_LOSS_DB, self.q_generic + self.gain)
    }

    /// Quality of `model` (or the generic model when `None`) on one patch.
    pub fn quality(&self, model: Option<&ZooEntry>, patch: &Embedding) -> f64 {
        match model {
            None => self.q_generic,
            Some(entry) => {
                let best = entry
                    .centers
                    .iter()
                    .map(|c| cosine_unchecked(c.values(), patch.values()))
                    .fold(f64::NEG_INFINITY, f64::max);
                self.from_similarity(best)
            }
        }
    }
}
