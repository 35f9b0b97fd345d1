//! Report and log files written by a simulation run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::experiment::{Experiment, Policy};
use crate::config::OutputHeader;
use crate::error::Result;

pub const REPORT_CSV: &str = "report.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const TRAINING_LOG: &str = "decisions.jsonl";
pub const VALIDATION_LOG: &str = "validation_decisions.jsonl";
pub const PREFETCH_LOG: &str = "prefetch.jsonl";
pub const HIT_RATIO_CSV: &str = "hit_ratio.csv";
pub const TIMELINE_CSV: &str = "quality_timeline.csv";

/// `fine_tuned=<n>/<total>`
pub fn summary_line(exp: &Experiment) -> String {
    format!(
        "fine_tuned={}/{}",
        exp.report.fine_tuned_segments, exp.report.total_segments
    )
}

pub fn report_csv(exp: &Experiment, header: &OutputHeader) -> String {
    let mut out = format!("{}\n", header.comment_line());
    out.push_str(
        "stream,policy,frames,mean_quality_db,hits,misses,hit_ratio,transmissions,bytes_shipped,infeasible_transmissions\n",
    );
    for r in &exp.report.streams {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{},{},{:.6},{},{},{}",
            r.stream,
            r.policy.name(),
            r.frames,
            r.mean_quality,
            r.hits,
            r.misses,
            r.hit_ratio,
            r.transmissions,
            r.bytes_shipped,
            r.infeasible_transmissions
        );
    }
    out
}

pub fn summary_json(exp: &Experiment, header: &OutputHeader) -> String {
    let r = &exp.report;
    let value = json!({
        "header": header,
        "fine_tuned_segments": r.fine_tuned_segments,
        "total_segments": r.total_segments,
        "summary": summary_line(exp),
        "models": r.models,
        "policy_mean_quality_db": r.policy_means,
        "hit_ratio": {
            "river-no-prefetch": stream_ratios(exp, Policy::RiverNoPrefetch),
            "river-prefetch": stream_ratios(exp, Policy::RiverPrefetch),
        },
        "bandwidth": r.bandwidth,
        "mean_retrieval_similarity": r.mean_retrieval_similarity,
        "oracle_calibration_constants": r.oracle,
        "segments": r.segments,
        "warnings": r.warnings,
    });
    let mut s = serde_json::to_string_pretty(&value).expect("summary serializes");
    s.push('\n');
    s
}

fn stream_ratios(exp: &Experiment, policy: Policy) -> serde_json::Map<String, serde_json::Value> {
    exp.report
        .streams
        .iter()
        .filter(|r| r.policy == policy)
        .map(|r| (r.stream.clone(), json!(r.hit_ratio)))
        .collect()
}

pub fn jsonl<T: Serialize>(records: &[T], header: &OutputHeader) -> String {
    let mut out = header.json_line();
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Cumulative per-stream hit ratio after each frame.
pub fn hit_ratio_csv(exp: &Experiment, header: &OutputHeader) -> String {
    let mut out = format!("{}\nstream,frame,time_s,no_prefetch,prefetch\n", header.comment_line());
    let mut current = String::new();
    let (mut n, mut h_np, mut h_pf) = (0u32, 0u32, 0u32);
    for f in &exp.timeline {
        if f.stream != current {
            current = f.stream.clone();
            (n, h_np, h_pf) = (0, 0, 0);
        }
        n += 1;
        h_np += u32::from(f.hit_no_prefetch);
        h_pf += u32::from(f.hit_prefetch);
        let _ = writeln!(
            out,
            "{},{},{:.3},{:.6},{:.6}",
            f.stream,
            f.frame,
            f.time,
            f64::from(h_np) / f64::from(n),
            f64::from(h_pf) / f64::from(n)
        );
    }
    out
}

pub fn timeline_csv(exp: &Experiment, header: &OutputHeader) -> String {
    let mut out = format!("{}\nstream,segment,frame,time_s,chosen", header.comment_line());
    for p in Policy::ALL {
        let _ = write!(out, ",{}", p.name());
    }
    out.push('\n');
    for f in &exp.timeline {
        let chosen = f.chosen.map(|c| c.to_string()).unwrap_or_default();
        let _ = write!(out, "{},{},{},{:.3},{}", f.stream, f.segment, f.frame, f.time, chosen);
        for q in f.quality {
            let _ = write!(out, ",{q:.6}");
        }
        out.push('\n');
    }
    out
}

/// Writes every report and log into `dir`, returning the paths written.
pub fn write_outputs(exp: &Experiment, header: &OutputHeader, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let files = [
        (REPORT_CSV, report_csv(exp, header)),
        (SUMMARY_JSON, summary_json(exp, header)),
        (TRAINING_LOG, jsonl(&exp.training_log, header)),
        (VALIDATION_LOG, jsonl(&exp.validation_log, header)),
        (PREFETCH_LOG, jsonl(&exp.prefetch_log, header)),
        (HIT_RATIO_CSV, hit_ratio_csv(exp, header)),
        (TIMELINE_CSV, timeline_csv(exp, header)),
    ];
    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}
