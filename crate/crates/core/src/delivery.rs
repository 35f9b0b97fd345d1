//! Model delivery: transfer probabilities between models, top-k prefetch
//! selection, the client-side LRU model cache and bandwidth accounting.
//!
//! Models are addressed by their lookup-table index, which equals their
//! registered id because ids are dense and the table only grows.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::encoder::cosine_unchecked;
use crate::error::{Error, Result};
use crate::zoo::LookupTable;

/// Row-stochastic matrix of model-to-model transition probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    pub probs: Vec<Vec<f64>>,
    /// Number of table entries the matrix was computed from.
    pub source_table_version: usize,
}

impl TransferMatrix {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i]
    }
}

/// Encoding similarity `d[i][j]`: for each center of entry `i`, the best
/// cosine similarity against any center of entry `j`, summed over `i`'s centers.
pub fn similarity_sums(table: &LookupTable) -> Vec<Vec<f64>> {
    let entries = table.entries();
    entries
        .iter()
        .map(|src| {
            entries
                .iter()
                .map(|dst| {
                    src.centers
                        .iter()
                        .map(|a| {
                            dst.centers
                                .iter()
                                .map(|b| cosine_unchecked(a.values(), b.values()))
                                .fold(f64::NEG_INFINITY, f64::max)
                        })
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// Softmax of one row, stabilized by subtracting the row maximum.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / total).collect()
}

pub fn transfer_matrix(table: &LookupTable) -> Result<TransferMatrix> {
    if table.is_empty() {
        return Err(Error::invalid("transfer matrix needs at least one model"));
    }
    let probs = similarity_sums(table).iter().map(|row| softmax(row)).collect();
    Ok(TransferMatrix {
        probs,
        source_table_version: table.len(),
    })
}

/// Indices of the `k` largest entries of `row`, descending; ties go to the lower index.
pub fn top_k(row: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Models worth shipping after `current`: the `k_top` most probable
/// successors that the client does not already hold, most probable first.
pub fn prefetch_set(current: usize, matrix: &TransferMatrix, k_top: usize, cache: &ClientCache) -> Result<Vec<usize>> {
    if current >= matrix.len() {
        return Err(Error::invalid(format!(
            "model {current} outside transfer matrix of size {}",
            matrix.len()
        )));
    }
    Ok(top_k(matrix.row(current), k_top)
        .into_iter()
        .filter(|m| !cache.contains(*m))
        .collect())
}

/// Least-recently-used model cache on the client.
///
/// The generic model is always available and never occupies a slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientCache {
    capacity: usize,
    /// Front is least recent, back is most recent.
    entries: VecDeque<usize>,
}

impl ClientCache {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("cache capacity must be positive"));
        }
        Ok(ClientCache {
            capacity,
            entries: VecDeque::with_capacity(capacity + 1),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, model: usize) -> bool {
        self.entries.contains(&model)
    }

    /// Models from least to most recently used.
    pub fn models(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().copied()
    }

    /// Uses `model`; on a hit it becomes the most recent entry.
    pub fn access(&mut self, model: usize) -> bool {
        match self.entries.iter().position(|&m| m == model) {
            Some(pos) => {
                self.entries.remove(pos);
                self.entries.push_back(model);
                true
            }
            None => false,
        }
    }

    /// Inserts models in order, each becoming the most recent. Returns evictions.
    pub fn insert(&mut self, models: &[usize]) -> Vec<usize> {
        let mut evicted = Vec::new();
        for &m in models {
            if let Some(pos) = self.entries.iter().position(|&x| x == m) {
                self.entries.remove(pos);
            }
            self.entries.push_back(m);
            while self.entries.len() > self.capacity {
                evicted.extend(self.entries.pop_front());
            }
        }
        evicted
    }
}

/// Bitrate headroom available for model transfer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthBudget {
    pub b_hr_kbps: f64,
    pub b_lr_kbps: f64,
    /// Period between transmissions.
    pub interval_seconds: f64,
}

impl BandwidthBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.b_hr_kbps >= self.b_lr_kbps) {
            return Err(Error::config("high-resolution bitrate must not be below the low-resolution bitrate"));
        }
        if !(self.interval_seconds > 0.0) {
            return Err(Error::config("transmission interval must be positive"));
        }
        Ok(())
    }

    pub fn delta_kbps(&self) -> f64 {
        self.b_hr_kbps - self.b_lr_kbps
    }

    pub fn with_interval(self, interval_seconds: f64) -> Self {
        BandwidthBudget {
            interval_seconds,
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transmission {
    pub rate_bps: f64,
    pub feasible: bool,
}

/// Rate needed to ship `sizes` (bytes) once per interval, checked against the headroom.
pub fn transmission_feasible(sizes: &[u64], budget: &BandwidthBudget) -> Result<Transmission> {
    if !(budget.interval_seconds > 0.0) {
        return Err(Error::invalid("interval_seconds must be positive"));
    }
    let bits = 8.0 * sizes.iter().map(|&s| s as f64).sum::<f64>();
    let rate_bps = bits / budget.interval_seconds;
    Ok(Transmission {
        rate_bps,
        feasible: rate_bps <= budget.delta_kbps() * 1000.0,
    })
}

/// A fixed shipping pattern checked against a bitrate budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthScenario {
    pub name: String,
    pub b_hr_kbps: f64,
    pub b_lr_kbps: f64,
    pub model_size_bytes: u64,
    pub models_per_transmission: u32,
    pub fps: f64,
    /// Frames between transmissions.
    pub interval_frames: u32,
}

impl BandwidthScenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: BandwidthScenario = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        if !(s.fps > 0.0) || s.interval_frames == 0 {
            return Err(Error::config("fps and interval_frames must be positive"));
        }
        s.budget().validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read scenario {}: {e}", path.display())))?;
        BandwidthScenario::from_toml_str(&text)
    }

    pub fn budget(&self) -> BandwidthBudget {
        BandwidthBudget {
            b_hr_kbps: self.b_hr_kbps,
            b_lr_kbps: self.b_lr_kbps,
            interval_seconds: f64::from(self.interval_frames) / self.fps,
        }
    }

    pub fn evaluate(&self) -> Result<Transmission> {
        let sizes = vec![self.model_size_bytes; self.models_per_transmission as usize];
        transmission_feasible(&sizes, &self.budget())
    }
}

/// One line of the prefetch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefetchRecord {
    pub stream: String,
    pub policy: String,
    pub time: f64,
    pub current_model: Option<u32>,
    pub prefetched: Vec<u32>,
    pub evicted: Vec<u32>,
    pub hit: bool,
    pub rate_bps: f64,
    pub feasible: bool,
}
