use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use srzoo::config::{digest, EmbeddingMode};
use srzoo::delivery::{top_k, transfer_matrix, BandwidthScenario};
use srzoo::edges::edge_score;
use srzoo::metrics::psnr;
use srzoo::pixels::{frame_file_name, load_frame_dir, load_pgm, partition, save_pgm, SegmentId};
use srzoo::scheduler::{DecisionRecord, FitParams, Scheduler};
use srzoo::sim::corpus::{calibration_corpus, mixed_frame, CorpusMix};
use srzoo::sim::report::{jsonl, summary_line, write_outputs};
use srzoo::sim::{generate_trace, k_ablation, run_experiment, train_zoo, Phase, TraceSpec};
use srzoo::zoo::{load_table, save_table, LookupTable};
use srzoo::{seed, Config, OutputHeader};

#[derive(Parser)]
#[command(name = "srzoo", version, about = "Content-aware super-resolution model zoo and delivery simulator")]
struct Cli {
    /// Engine configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Overrides {
    /// Cluster centers per model.
    #[arg(long)]
    k: Option<usize>,
    /// Edge threshold.
    #[arg(long)]
    lambda: Option<f64>,
    /// Similarity threshold for a vote.
    #[arg(long)]
    beta: Option<f64>,
    /// Vote / segment fine-tune threshold.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    patch_size: Option<usize>,
    /// Use embeddings from this file instead of the built-in encoder.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a lookup table from a frame directory or a synthetic trace.
    BuildZoo {
        #[arg(long, conflicts_with = "trace", required_unless_present = "trace")]
        frames: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Existing table to extend (frame directories only).
        #[arg(long, conflicts_with = "trace")]
        table: Option<PathBuf>,
        /// Frames per segment when reading a frame directory.
        #[arg(long, default_value_t = 300)]
        segment_frames: usize,
        /// Stream name recorded for frame-directory segments.
        #[arg(long, default_value = "input")]
        stream: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Choose a model for every frame against a fixed table.
    Schedule {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        table: PathBuf,
        #[arg(long, default_value_t = 300)]
        segment_frames: usize,
        #[arg(long, default_value = "input")]
        stream: String,
        /// Decision log path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the full experiment on a trace and write reports.
    Simulate {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value = "sim-out")]
        out: PathBuf,
        /// Also rerun training for these K values, e.g. 1,2,3,4,5.
        #[arg(long, value_delimiter = ',')]
        k_ablation: Vec<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// PSNR between two PGM frames.
    Psnr { a: PathBuf, b: PathBuf },
    /// Per-patch edge scores and the retained mask.
    Edges {
        frame: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        patch_size: Option<usize>,
    },
    /// Model-to-model transfer probabilities of a table.
    TransferMatrix {
        #[arg(long)]
        table: PathBuf,
        /// Also list the N most likely successors of every model.
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Check a shipping pattern against its bitrate budget.
    Bandwidth {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Write one segment of a synthetic trace as PGM frames.
    Render {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        stream: Option<String>,
        #[arg(long, default_value_t = 0)]
        segment: usize,
        #[arg(long, value_enum, default_value_t = PhaseArg::Train)]
        phase: PhaseArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the edge-threshold calibration corpus as PGM frames.
    Corpus {
        #[arg(long, default_value_t = 40)]
        frames: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a frame alternating textured and flat patches.
    MixedFrame {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Train,
    Validate,
}

/// Bad user input; exits with code 2.
#[derive(Debug)]
struct InputError(String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<InputError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<srzoo::Error>() {
            return match e {
                srzoo::Error::Format(_) => 3,
                srzoo::Error::InvalidArgument(_)
                | srzoo::Error::Config(_)
                | srzoo::Error::NoModels
                | srzoo::Error::NoComplexPatches
                | srzoo::Error::Io(_) => 2,
            };
        }
        if cause.downcast_ref::<io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn load_config(cli: &Cli, overrides: &Overrides) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(k) = overrides.k {
        cfg.k = k;
    }
    if let Some(v) = overrides.lambda {
        cfg.scheduler.lambda = v;
    }
    if let Some(v) = overrides.beta {
        cfg.scheduler.beta = v;
    }
    if let Some(v) = overrides.alpha {
        cfg.scheduler.alpha = v;
    }
    if let Some(v) = overrides.patch_size {
        cfg.patch_size = v;
    }
    if let Some(p) = &overrides.embeddings {
        cfg.embedding = EmbeddingMode::Import { path: p.clone() };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn header_for(cfg: &Config, extra: &[String]) -> OutputHeader {
    let mut parts = vec![serde_json::to_string(cfg).expect("config serializes")];
    parts.extend_from_slice(extra);
    OutputHeader::new(cfg.seed, digest(&parts))
}

fn load_frames(dir: &Path) -> Result<Vec<srzoo::Frame>> {
    if !dir.is_dir() {
        return Err(input_error(format!("{} is not a directory", dir.display())));
    }
    let frames = load_frame_dir(dir)?;
    if frames.is_empty() {
        return Err(input_error(format!("no frames found in {}", dir.display())));
    }
    Ok(frames)
}

/// Writes the table and a JSON sidecar carrying provenance and segment origins.
fn write_table(table: &LookupTable, out: &Path, header: &OutputHeader) -> Result<()> {
    save_table(table, out).with_context(|| format!("writing {}", out.display()))?;
    let entries: Vec<_> = table
        .entries()
        .iter()
        .map(|e| {
            json!({
                "model_id": e.model.id,
                "size_bytes": e.model.size_bytes,
                "k_effective": e.k_effective(),
                "source_segment": e.model.source_segment,
            })
        })
        .collect();
    let meta = json!({ "header": header, "dimension": table.dimension(), "k": table.k(), "entries": entries });
    let mut side = out.as_os_str().to_owned();
    side.push(".json");
    fs::write(PathBuf::from(side), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

fn print_table(table: &LookupTable, out: &mut impl Write) -> Result<()> {
    writeln!(out, "R={}", table.len())?;
    for e in table.entries() {
        let origin = e
            .model
            .source_segment
            .as_ref()
            .map(|s| format!(" segment={}#{}", s.stream, s.segment_ordinal))
            .unwrap_or_default();
        writeln!(out, "model {} k_eff={}{}", e.model.id, e.k_effective(), origin)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match &cli.command {
        Command::BuildZoo {
            frames,
            trace,
            table,
            segment_frames,
            stream,
            out: path,
            overrides,
        } => {
            let cfg = load_config(&cli, overrides)?;
            let encoder = cfg.encoder()?;
            let (built, header) = if let Some(trace_path) = trace {
                let spec = TraceSpec::load(trace_path)?;
                let trace = generate_trace(&spec)?;
                let training = train_zoo(&trace, &cfg, encoder.as_ref())?;
                for w in &training.warnings {
                    eprintln!("warning: {w}");
                }
                (training.table, header_for(&cfg, &[spec.to_toml_string()]))
            } else {
                let dir = frames.as_ref().expect("clap enforces frames or trace");
                if *segment_frames == 0 {
                    return Err(input_error("--segment-frames must be positive"));
                }
                let frames = load_frames(dir)?;
                let mut current = match table {
                    Some(t) => load_table(t)?,
                    None => LookupTable::new(encoder.dimension(), cfg.k)?,
                };
                let scheduler = Scheduler::new(cfg.scheduler, encoder.as_ref(), cfg.patch_size);
                let mut retained_total = 0usize;
                let mut previous = None;
                for (g, chunk) in frames.chunks(*segment_frames).enumerate() {
                    for f in chunk {
                        retained_total += scheduler.retained_embeddings(f)?.len();
                    }
                    let fit = FitParams {
                        max_iters: cfg.max_iters,
                        restarts: cfg.kmeans_restarts,
                        ..FitParams::new(seed::derive(cfg.seed, "fit", g as u64), cfg.model_size_bytes)
                    };
                    let segment = SegmentId::new(stream.clone(), g as u32, chunk.len() as u32)?;
                    let outcome = scheduler.schedule_segment(chunk, &current, fit, segment, previous)?;
                    previous = outcome.frames.iter().rev().find_map(|d| d.chosen).or(previous);
                    if let Some(w) = &outcome.warning {
                        eprintln!("warning: {w}");
                    }
                    if let Some(t) = outcome.table {
                        current = t;
                    }
                }
                if retained_total == 0 {
                    return Err(input_error(format!(
                        "no patch in {} scores above lambda = {}",
                        dir.display(),
                        cfg.scheduler.lambda
                    )));
                }
                (current, header_for(&cfg, &[]))
            };
            write_table(&built, path, &header)?;
            print_table(&built, &mut out)?;
        }
        Command::Schedule {
            frames,
            table,
            segment_frames,
            stream,
            out: path,
            overrides,
        } => {
            let cfg = load_config(&cli, overrides)?;
            if *segment_frames == 0 {
                return Err(input_error("--segment-frames must be positive"));
            }
            let encoder = cfg.encoder()?;
            let frames = load_frames(frames)?;
            let table = load_table(table)?;
            if table.dimension() != encoder.dimension() {
                return Err(input_error(format!(
                    "table dimension {} does not match encoder dimension {}",
                    table.dimension(),
                    encoder.dimension()
                )));
            }
            let scheduler = Scheduler::new(cfg.scheduler, encoder.as_ref(), cfg.patch_size);
            let mut records = Vec::with_capacity(frames.len());
            let mut previous = None;
            for (g, chunk) in frames.chunks(*segment_frames).enumerate() {
                let mut flagged = 0usize;
                for f in chunk {
                    let d = scheduler.schedule_frame(f, &table, previous)?;
                    previous = d.chosen.or(previous);
                    flagged += usize::from(d.needs_fine_tune);
                    records.push(DecisionRecord::new(stream, g as u32, &d, &table));
                }
                let fine_tune = flagged as f64 > cfg.scheduler.alpha * chunk.len() as f64;
                eprintln!("segment {g}: flagged {flagged}/{} fine_tune={fine_tune}", chunk.len());
            }
            let body = jsonl(&records, &header_for(&cfg, &[]));
            match path {
                Some(p) => fs::write(p, body).with_context(|| format!("writing {}", p.display()))?,
                None => out.write_all(body.as_bytes())?,
            }
        }
        Command::Simulate {
            trace,
            out: dir,
            k_ablation: ks,
            overrides,
        } => {
            let cfg = load_config(&cli, overrides)?;
            let encoder = cfg.encoder()?;
            let spec = TraceSpec::load(trace)?;
            let sim = generate_trace(&spec)?;
            let exp = run_experiment(&sim, &cfg, encoder.as_ref())?;
            let header = header_for(&cfg, &[spec.to_toml_string()]);
            write_outputs(&exp, &header, dir)?;
            writeln!(out, "{}", summary_line(&exp))?;
            for (policy, q) in &exp.report.policy_means {
                writeln!(out, "mean_quality_db[{policy}]={q:.4}")?;
            }
            if !ks.is_empty() {
                let points = k_ablation(&sim, &cfg, encoder.as_ref(), ks)?;
                let mut csv = format!("{}\nk,fine_tuned_segments,mean_retrieval_similarity\n", header.comment_line());
                for p in &points {
                    csv.push_str(&format!("{},{},{:.6}\n", p.k, p.fine_tuned_segments, p.mean_retrieval_similarity));
                    writeln!(out, "k={} fine_tuned={}/{}", p.k, p.fine_tuned_segments, exp.report.total_segments)?;
                }
                fs::write(dir.join("k_ablation.csv"), csv)?;
            }
            writeln!(out, "reports written to {}", dir.display())?;
        }
        Command::Psnr { a, b } => {
            let fa = load_pgm(a)?;
            let fb = load_pgm(b)?;
            writeln!(out, "{}", psnr(&fa, &fb)?)?;
        }
        Command::Edges {
            frame,
            lambda,
            patch_size,
        } => {
            let overrides = Overrides {
                lambda: *lambda,
                patch_size: *patch_size,
                ..Overrides::default()
            };
            let cfg = load_config(&cli, &overrides)?;
            let f = load_pgm(frame)?;
            let patches = partition(&f, cfg.patch_size)?;
            writeln!(out, "{}", header_for(&cfg, &[]).comment_line())?;
            writeln!(out, "row,col,score,retained")?;
            let mut kept = 0usize;
            for p in &patches {
                let score = edge_score(p)?.0;
                let keep = score > cfg.scheduler.lambda;
                kept += usize::from(keep);
                writeln!(out, "{},{},{:.4},{}", p.grid_row, p.grid_col, score, u8::from(keep))?;
            }
            let fraction = if patches.is_empty() {
                0.0
            } else {
                kept as f64 / patches.len() as f64
            };
            writeln!(out, "retained={}/{} fraction={:.4}", kept, patches.len(), fraction)?;
        }
        Command::TransferMatrix { table, top_k: k } => {
            let t = load_table(table)?;
            let m = transfer_matrix(&t)?;
            let ids: Vec<String> = t.entries().iter().map(|e| e.model.id.to_string()).collect();
            writeln!(out, "model,{}", ids.join(","))?;
            for (i, row) in m.probs.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|p| format!("{p:.9}")).collect();
                writeln!(out, "{},{}", ids[i], cells.join(","))?;
            }
            if let Some(k) = k {
                for (i, row) in m.probs.iter().enumerate() {
                    let next: Vec<&str> = top_k(row, *k).into_iter().map(|j| ids[j].as_str()).collect();
                    writeln!(out, "top {}: {}", ids[i], next.join(" "))?;
                }
            }
        }
        Command::Bandwidth { scenario } => {
            let s = BandwidthScenario::load(scenario)?;
            let t = s.evaluate()?;
            writeln!(
                out,
                "scenario={} rate_mbps={:.4} budget_mbps={:.4} feasible={}",
                s.name,
                t.rate_bps / 1e6,
                s.budget().delta_kbps() / 1e3,
                t.feasible
            )?;
        }
        Command::Render {
            trace,
            stream,
            segment,
            phase,
            out: dir,
        } => {
            let spec = TraceSpec::load(trace)?;
            let sim = generate_trace(&spec)?;
            let s = match stream {
                Some(name) => sim
                    .streams
                    .iter()
                    .position(|s| &s.name == name)
                    .ok_or_else(|| input_error(format!("unknown stream {name:?}")))?,
                None => 0,
            };
            if *segment >= sim.streams[s].segments.len() {
                return Err(input_error(format!("stream has no segment {segment}")));
            }
            let phase = match phase {
                PhaseArg::Train => Phase::Train,
                PhaseArg::Validate => Phase::Validate,
            };
            fs::create_dir_all(dir)?;
            let frames = sim.segment_frames(s, *segment, phase);
            for f in &frames {
                save_pgm(f, dir.join(frame_file_name(f.index())))?;
            }
            writeln!(out, "wrote {} frames to {}", frames.len(), dir.display())?;
        }
        Command::Corpus { frames, out: dir } => {
            let seed = cli.seed.unwrap_or(Config::default().seed);
            fs::create_dir_all(dir)?;
            for f in calibration_corpus(seed, *frames, &CorpusMix::default()) {
                save_pgm(&f, dir.join(frame_file_name(f.index())))?;
            }
            writeln!(out, "wrote {frames} frames to {}", dir.display())?;
        }
        Command::MixedFrame { out: path } => {
            let seed = cli.seed.unwrap_or(Config::default().seed);
            save_pgm(&mixed_frame(seed), path)?;
            writeln!(out, "wrote {}", path.display())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
