//! End-to-end experiment: grow the zoo on training footage, then replay
//! held-out footage under each delivery policy.
//!
//! Training visits segments in arrival order against a single shared table,
//! so it is strictly sequential. Validation schedules every frame against
//! the final table and simulates one client cache per stream.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use super::trace::{generate_trace, ArrivalOrder, ClassSpec, Phase, SimTrace, StreamSpec, TraceSpec};
use super::QualityOracle;
use crate::config::Config;
use crate::delivery::{
    prefetch_set, top_k, transfer_matrix, transmission_feasible, ClientCache, PrefetchRecord, TransferMatrix,
};
use crate::edges;
use crate::encoder::{Embedding, PatchEncoder};
use crate::error::{Error, Result};
use crate::pixels::{partition, Frame};
use crate::scheduler::{decide_frame, schedule_encoded_segment, DecisionRecord, FitParams};
use crate::seed;
use crate::zoo::{query_patch, LookupTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// One generic model for everything.
    Generic,
    /// A uniformly random zoo model per frame.
    RandomReuse,
    /// The scheduled model, assumed always resident.
    RiverIdeal,
    /// Ships the current frame's model every short period.
    RiverNoPrefetch,
    /// Ships the top transfer candidates every long period.
    RiverPrefetch,
}

impl Policy {
    pub const ALL: [Policy; 5] = [
        Policy::Generic,
        Policy::RandomReuse,
        Policy::RiverIdeal,
        Policy::RiverNoPrefetch,
        Policy::RiverPrefetch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Generic => "generic",
            Policy::RandomReuse => "random-reuse",
            Policy::RiverIdeal => "river-ideal",
            Policy::RiverNoPrefetch => "river-no-prefetch",
            Policy::RiverPrefetch => "river-prefetch",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// Per stream and policy totals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamReport {
    pub stream: String,
    pub policy: Policy,
    pub frames: u32,
    pub mean_quality: f64,
    pub hits: u32,
    pub misses: u32,
    pub hit_ratio: f64,
    pub transmissions: u32,
    pub bytes_shipped: u64,
    pub infeasible_transmissions: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentSummary {
    pub stream: String,
    pub segment: u32,
    pub class: String,
    pub arrival: u32,
    pub frames_flagged: u32,
    pub total_frames: u32,
    pub fine_tuned: bool,
    pub model_id: Option<u32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BandwidthCounts {
    pub feasible: u32,
    pub infeasible: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub fine_tuned_segments: u32,
    pub total_segments: u32,
    pub models: u32,
    pub segments: Vec<SegmentSummary>,
    pub streams: Vec<StreamReport>,
    /// Mean frame quality over the whole trace, per policy name.
    pub policy_means: BTreeMap<String, f64>,
    pub bandwidth: BTreeMap<String, BandwidthCounts>,
    /// Mean best-match similarity of retained validation patches.
    pub mean_retrieval_similarity: f64,
    pub oracle: QualityOracle,
    pub warnings: Vec<String>,
}

impl SimReport {
    pub fn stream(&self, stream: &str, policy: Policy) -> Option<&StreamReport> {
        self.streams.iter().find(|r| r.stream == stream && r.policy == policy)
    }

    pub fn policy_mean(&self, policy: Policy) -> f64 {
        self.policy_means[policy.name()]
    }
}

/// Quality of one validation frame under every policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameOutcome {
    pub stream: String,
    pub segment: u32,
    pub frame: u32,
    pub time: f64,
    pub chosen: Option<u32>,
    pub quality: [f64; 5],
    pub hit_no_prefetch: bool,
    pub hit_prefetch: bool,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: SimReport,
    pub table: LookupTable,
    pub matrix: Option<TransferMatrix>,
    pub training_log: Vec<DecisionRecord>,
    pub validation_log: Vec<DecisionRecord>,
    pub prefetch_log: Vec<PrefetchRecord>,
    pub timeline: Vec<FrameOutcome>,
}

struct EncodedFrame {
    index: u32,
    retained: Vec<Embedding>,
    all: Vec<Embedding>,
}

fn encode_frame(frame: &Frame, encoder: &dyn PatchEncoder, patch_size: usize, lambda: f64) -> Result<EncodedFrame> {
    let mut retained = Vec::new();
    let mut all = Vec::new();
    for p in partition(frame, patch_size)? {
        let e = encoder.encode(&p)?;
        if edges::retained(&p, lambda) {
            retained.push(e.clone());
        }
        all.push(e);
    }
    Ok(EncodedFrame {
        index: frame.index(),
        retained,
        all,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Client-side state for one delivery policy on one stream.
struct Delivery {
    policy: Policy,
    cache: ClientCache,
    period: f64,
    next_event: f64,
    hits: u32,
    misses: u32,
    transmissions: u32,
    bytes: u64,
    infeasible: u32,
}

impl Delivery {
    fn new(policy: Policy, capacity: usize, period: f64) -> Result<Self> {
        Ok(Delivery {
            policy,
            cache: ClientCache::new(capacity)?,
            period,
            next_event: 0.0,
            hits: 0,
            misses: 0,
            transmissions: 0,
            bytes: 0,
            infeasible: 0,
        })
    }

    /// Resident model for a frame whose scheduled model is `chosen`.
    fn serve(&mut self, chosen: Option<usize>) -> (bool, Option<usize>) {
        let hit = chosen.is_none_or(|m| self.cache.access(m));
        if hit {
            self.hits += 1;
            (true, chosen)
        } else {
            self.misses += 1;
            (false, None)
        }
    }
}

fn model_ids(table: &LookupTable, models: &[usize]) -> Vec<u32> {
    models.iter().map(|&m| table.entries()[m].model.id).collect()
}

/// Result of growing the zoo over a trace's training footage.
#[derive(Debug, Clone)]
pub struct Training {
    pub table: LookupTable,
    pub log: Vec<DecisionRecord>,
    pub segments: Vec<SegmentSummary>,
    pub warnings: Vec<String>,
    pub fine_tuned: u32,
}

/// Visits segments in arrival order, scheduling each against the table as it
/// stands and fitting a new entry whenever the fine-tune rule fires.
pub fn train_zoo(trace: &SimTrace, cfg: &Config, encoder: &dyn PatchEncoder) -> Result<Training> {
    cfg.validate()?;
    if trace.spec.patch_size != cfg.patch_size {
        return Err(Error::config(format!(
            "trace patch_size {} differs from configured patch_size {}",
            trace.spec.patch_size, cfg.patch_size
        )));
    }
    let params = cfg.scheduler;
    let mut table = LookupTable::new(encoder.dimension(), cfg.k)?;
    let mut training_log = Vec::new();
    let mut segments = Vec::new();
    let mut warnings = Vec::new();
    let mut last_model: Vec<Option<usize>> = vec![None; trace.streams.len()];
    let mut fine_tuned = 0u32;

    for (arrival, &(s, g)) in trace.arrival_order().iter().enumerate() {
        let seg = trace.segment(s, g);
        let mut indices = Vec::new();
        let mut retained = Vec::new();
        for frame in trace.segment_frames(s, g, Phase::Train) {
            let enc = encode_frame(&frame, encoder, cfg.patch_size, params.lambda)?;
            indices.push(enc.index);
            retained.push(enc.retained);
        }
        let fit = FitParams {
            seed: seed::derive(cfg.seed, "fit", arrival as u64),
            model_size_bytes: cfg.model_size_bytes,
            max_iters: cfg.max_iters,
            restarts: cfg.kmeans_restarts,
        };
        let outcome =
            schedule_encoded_segment(&indices, &retained, &table, &params, fit, seg.id.clone(), last_model[s])?;
        for d in &outcome.frames {
            training_log.push(DecisionRecord::new(&seg.id.stream, g as u32, d, &table));
            last_model[s] = d.chosen.or(last_model[s]);
        }
        let mut model_id = None;
        if let Some(next) = outcome.table {
            model_id = next.entries().last().map(|e| e.model.id);
            table = next;
        }
        if let Some(w) = outcome.warning {
            log::warn!("{w}");
            warnings.push(w);
        }
        if outcome.decision.fine_tune_segment {
            fine_tuned += 1;
        }
        segments.push(SegmentSummary {
            stream: seg.id.stream.clone(),
            segment: g as u32,
            class: trace.classes[seg.class].name.clone(),
            arrival: arrival as u32,
            frames_flagged: outcome.decision.frames_flagged,
            total_frames: outcome.decision.total_frames,
            fine_tuned: outcome.decision.fine_tune_segment,
            model_id,
        });
    }
    log::info!("training done: {fine_tuned}/{} segments fine-tuned", segments.len());

    Ok(Training {
        table,
        log: training_log,
        segments,
        warnings,
        fine_tuned,
    })
}

/// Runs training and validation for every policy.
pub fn run_experiment(trace: &SimTrace, cfg: &Config, encoder: &dyn PatchEncoder) -> Result<Experiment> {
    let spec = &trace.spec;
    let params = cfg.scheduler;
    let Training {
        table,
        log: training_log,
        segments,
        warnings,
        fine_tuned,
    } = train_zoo(trace, cfg, encoder)?;

    let matrix = if table.is_empty() {
        None
    } else {
        Some(transfer_matrix(&table)?)
    };
    let oracle = cfg.oracle;
    let delivery = cfg.delivery;
    let frame_seconds = spec.segment_seconds / f64::from(spec.frames_per_segment);

    let mut validation_log = Vec::new();
    let mut prefetch_log = Vec::new();
    let mut timeline = Vec::new();
    let mut streams = Vec::new();
    let mut similarity_sum = 0.0;
    let mut similarity_n = 0usize;
    let mut bandwidth: BTreeMap<String, BandwidthCounts> = BTreeMap::new();

    for (s, stream) in trace.streams.iter().enumerate() {
        let mut random = seed::rng(cfg.seed, "random-reuse", s as u64);
        let mut no_pf = Delivery::new(
            Policy::RiverNoPrefetch,
            delivery.cache_capacity,
            delivery.no_prefetch_period_seconds,
        )?;
        let mut pf = Delivery::new(Policy::RiverPrefetch, delivery.cache_capacity, delivery.prefetch_period_seconds)?;
        let mut previous = None;
        let mut sums = [0.0f64; 5];
        let mut frames = 0u32;

        for (g, _) in stream.segments.iter().enumerate() {
            for i in 0..spec.frames_per_segment {
                let frame = trace.render_frame(s, g, Phase::Validate, i);
                let enc = encode_frame(&frame, encoder, cfg.patch_size, params.lambda)?;
                let d = decide_frame(enc.index, &enc.retained, &table, &params, previous)?;
                previous = d.chosen.or(previous);
                validation_log.push(DecisionRecord::new(&stream.name, g as u32, &d, &table));
                if !table.is_empty() {
                    for e in &enc.retained {
                        similarity_sum += query_patch(e, &table)?.similarity;
                        similarity_n += 1;
                    }
                }
                let time = (g as f64 * spec.segment_seconds) + f64::from(i) * frame_seconds;
                let current = d.chosen;

                for dl in [&mut no_pf, &mut pf] {
                    if time + 1e-9 < dl.next_event {
                        continue;
                    }
                    dl.next_event += dl.period;
                    let (ship, order) = match (current, &matrix) {
                        (Some(m), Some(mx)) if dl.policy == Policy::RiverPrefetch => {
                            let ship = prefetch_set(m, mx, delivery.top_k, &dl.cache)?;
                            // Least probable first so the most probable ends up most recent.
                            let mut order = top_k(mx.row(m), delivery.top_k);
                            order.reverse();
                            (ship, order)
                        }
                        (Some(m), _) => {
                            let ship = if dl.cache.contains(m) { vec![] } else { vec![m] };
                            (ship, vec![m])
                        }
                        (None, _) => (vec![], vec![]),
                    };
                    let hit = current.is_none_or(|m| dl.cache.contains(m));
                    let evicted = dl.cache.insert(&order);
                    let sizes: Vec<u64> = ship.iter().map(|&m| table.entries()[m].model.size_bytes).collect();
                    let tx = transmission_feasible(&sizes, &delivery.budget(dl.period))?;
                    dl.transmissions += 1;
                    dl.bytes += sizes.iter().sum::<u64>();
                    let counts = bandwidth.entry(dl.policy.name().to_string()).or_default();
                    if tx.feasible {
                        counts.feasible += 1;
                    } else {
                        counts.infeasible += 1;
                        dl.infeasible += 1;
                    }
                    prefetch_log.push(PrefetchRecord {
                        stream: stream.name.clone(),
                        policy: dl.policy.name().to_string(),
                        time,
                        current_model: current.map(|m| table.entries()[m].model.id),
                        prefetched: model_ids(&table, &ship),
                        evicted: model_ids(&table, &evicted),
                        hit,
                        rate_bps: tx.rate_bps,
                        feasible: tx.feasible,
                    });
                }

                let (hit_np, res_np) = no_pf.serve(current);
                let (hit_pf, res_pf) = pf.serve(current);
                let random_model = if table.is_empty() {
                    None
                } else {
                    Some(random.random_range(0..table.len()))
                };
                let residents = [None, random_model, current, res_np, res_pf];
                let mut quality = [0.0f64; 5];
                for (slot, resident) in residents.iter().enumerate() {
                    let entry = resident.map(|m| &table.entries()[m]);
                    quality[slot] = mean(enc.all.iter().map(|e| oracle.quality(entry, e)));
                    sums[slot] += quality[slot];
                }
                frames += 1;
                timeline.push(FrameOutcome {
                    stream: stream.name.clone(),
                    segment: g as u32,
                    frame: enc.index,
                    time,
                    chosen: current.map(|m| table.entries()[m].model.id),
                    quality,
                    hit_no_prefetch: hit_np,
                    hit_prefetch: hit_pf,
                });
            }
        }

        for policy in Policy::ALL {
            let dl = match policy {
                Policy::RiverNoPrefetch => Some(&no_pf),
                Policy::RiverPrefetch => Some(&pf),
                _ => None,
            };
            let (hits, misses) = dl.map_or((frames, 0), |d| (d.hits, d.misses));
            debug_assert_eq!(hits + misses, frames);
            streams.push(StreamReport {
                stream: stream.name.clone(),
                policy,
                frames,
                mean_quality: sums[policy.slot()] / f64::from(frames.max(1)),
                hits,
                misses,
                hit_ratio: f64::from(hits) / f64::from(frames.max(1)),
                transmissions: dl.map_or(0, |d| d.transmissions),
                bytes_shipped: dl.map_or(0, |d| d.bytes),
                infeasible_transmissions: dl.map_or(0, |d| d.infeasible),
            });
        }
    }

    let policy_means = Policy::ALL
        .iter()
        .map(|&p| (p.name().to_string(), mean(timeline.iter().map(|f| f.quality[p.slot()]))))
        .collect();
    let report = SimReport {
        fine_tuned_segments: fine_tuned,
        total_segments: segments.len() as u32,
        models: table.len() as u32,
        segments,
        streams,
        policy_means,
        bandwidth,
        mean_retrieval_similarity: if similarity_n == 0 {
            0.0
        } else {
            similarity_sum / similarity_n as f64
        },
        oracle,
        warnings,
    };
    Ok(Experiment {
        report,
        table,
        matrix,
        training_log,
        validation_log,
        prefetch_log,
        timeline,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AblationPoint {
    pub k: usize,
    pub fine_tuned_segments: u32,
    pub mean_retrieval_similarity: f64,
}

/// Reruns the experiment for each `k`, everything else fixed.
pub fn k_ablation(trace: &SimTrace, cfg: &Config, encoder: &dyn PatchEncoder, ks: &[usize]) -> Result<Vec<AblationPoint>> {
    ks.iter()
        .map(|&k| {
            let cfg = Config { k, ..cfg.clone() };
            let r = run_experiment(trace, &cfg, encoder)?.report;
            Ok(AblationPoint {
                k,
                fine_tuned_segments: r.fine_tuned_segments,
                mean_retrieval_similarity: r.mean_retrieval_similarity,
            })
        })
        .collect()
}

/// A random trace mixing stable streams (one class throughout), partial
/// streams (one class, then a sibling for the last segment) and volatile
/// streams (cycling through three sibling classes). Every stream draws its
/// classes from its own family, so distinct streams never share content.
pub fn random_trace_spec(seed: u64, frames_per_segment: u32) -> TraceSpec {
    let mut rng = seed::rng(seed, "random-trace", 0);
    let stable = rng.random_range(1..=3);
    let partial = rng.random_range(0..=2);
    let volatile = rng.random_range(1..=2);
    let length: usize = rng.random_range(3..=5);
    let mut classes = Vec::new();
    let mut streams = Vec::new();
    let mut add_class = |name: String, family: Option<String>| {
        classes.push(ClassSpec::new(name.clone(), family));
        name
    };
    for i in 0..stable {
        let a = add_class(format!("stable{i}"), None);
        streams.push(StreamSpec {
            name: format!("stable-{i}"),
            segments: vec![a; length],
        });
    }
    for i in 0..partial {
        let fam = Some(format!("partial{i}"));
        let b = add_class(format!("partial{i}a"), fam.clone());
        let c = add_class(format!("partial{i}b"), fam);
        let mut segs = vec![b; length - 1];
        segs.push(c);
        streams.push(StreamSpec {
            name: format!("partial-{i}"),
            segments: segs,
        });
    }
    for i in 0..volatile {
        let fam = Some(format!("volatile{i}"));
        let names: Vec<String> = (0..3)
            .map(|j| add_class(format!("volatile{i}{}", ["a", "b", "c"][j]), fam.clone()))
            .collect();
        streams.push(StreamSpec {
            name: format!("volatile-{i}"),
            segments: (0..length).map(|g| names[g % 3].clone()).collect(),
        });
    }
    TraceSpec {
        seed,
        width: 96,
        height: 96,
        patch_size: 32,
        frames_per_segment,
        segment_seconds: 10.0,
        order: ArrivalOrder::RoundRobin,
        family_motifs: 2,
        max_prototype_similarity: 0.55,
        classes,
        streams,
    }
}

/// Convenience: generate the trace for a spec and run it.
pub fn simulate_spec(spec: &TraceSpec, cfg: &Config, encoder: &dyn PatchEncoder) -> Result<Experiment> {
    let trace = generate_trace(spec)?;
    run_experiment(&trace, cfg, encoder)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::BuiltinEncoder;

    fn small_spec() -> TraceSpec {
        TraceSpec::from_toml_str(
            r#"
seed = 5
frames_per_segment = 6
[[classes]]
name = "a"
[[classes]]
name = "b"
[[streams]]
name = "s0"
segments = ["a", "a"]
[[streams]]
name = "s1"
segments = ["b", "b"]
"#,
        )
        .unwrap()
    }

    #[test]
    fn hits_and_misses_cover_every_frame() {
        let exp = simulate_spec(&small_spec(), &Config::default(), &BuiltinEncoder).unwrap();
        for r in &exp.report.streams {
            assert_eq!(r.hits + r.misses, r.frames);
            assert_eq!(r.frames, 12);
            assert!((0.0..=1.0).contains(&r.hit_ratio));
        }
        assert_eq!(exp.report.total_segments, 4);
        assert_eq!(exp.report.fine_tuned_segments, 2);
        assert_eq!(exp.timeline.len(), 24);
    }

    #[test]
    fn generic_policy_is_the_baseline() {
        let exp = simulate_spec(&small_spec(), &Config::default(), &BuiltinEncoder).unwrap();
        assert_eq!(exp.report.policy_mean(Policy::Generic), 27.0);
        assert!(exp.report.policy_mean(Policy::RiverIdeal) > 27.0);
    }

    #[test]
    fn mismatched_patch_size_is_rejected() {
        let cfg = Config {
            patch_size: 16,
            ..Config::default()
        };
        let err = simulate_spec(&small_spec(), &cfg, &BuiltinEncoder).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn random_specs_are_valid() {
        for seed in 0..10 {
            let s = random_trace_spec(seed, 5);
            s.validate().unwrap();
            assert!(s.classes.len() >= 3);
        }
    }
}
