use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

fn srzoo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srzoo"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const THREE_CLASSES: &str = r#"
seed = 5
frames_per_segment = 10
[[classes]]
name = "a"
[[classes]]
name = "b"
[[classes]]
name = "c"
[[streams]]
name = "only"
segments = ["a", "b", "c"]
"#;

#[test]
fn simulate_reports_fine_tuned_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = srzoo(&["simulate", "--trace", p(&data("table36.toml")), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().next(), Some("fine_tuned=20/36"));
    for f in ["report.csv", "summary.json", "decisions.jsonl", "hit_ratio.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn simulate_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.toml");
    fs::write(&trace, THREE_CLASSES).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = srzoo(&["simulate", "--trace", p(&trace), "--out", p(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "k = 1\n").unwrap();
    let trace = data("table36.toml");
    let from_file = srzoo(&["--config", p(&cfg), "simulate", "--trace", p(&trace), "--out", p(&dir.path().join("x"))]);
    assert!(from_file.status.success(), "{}", stderr(&from_file));
    let overridden = srzoo(&[
        "--config",
        p(&cfg),
        "simulate",
        "--trace",
        p(&trace),
        "--k",
        "5",
        "--out",
        p(&dir.path().join("y")),
    ]);
    assert!(overridden.status.success(), "{}", stderr(&overridden));
    assert_eq!(stdout(&overridden).lines().next(), Some("fine_tuned=20/36"));
    assert_ne!(stdout(&from_file).lines().next(), stdout(&overridden).lines().next());
}

#[test]
fn build_zoo_from_three_class_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.toml");
    fs::write(&trace, THREE_CLASSES).unwrap();
    let (one, two) = (dir.path().join("one.bin"), dir.path().join("two.bin"));
    for out in [&one, &two] {
        let o = srzoo(&["build-zoo", "--trace", p(&trace), "--out", p(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("R=3"), "{}", stdout(&o));
    }
    assert_eq!(fs::read(&one).unwrap(), fs::read(&two).unwrap());
}

#[test]
fn psnr_of_identical_frames_is_infinite() {
    let f = data("mixed_frame.pgm");
    let o = srzoo(&["psnr", p(&f), p(&f)]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "inf");
}

#[test]
fn edges_on_mixed_frame_keep_half() {
    let o = srzoo(&["edges", p(&data("mixed_frame.pgm"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("retained=4/8 fraction=0.5000"));
}

#[test]
fn empty_frame_dir_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = srzoo(&["schedule", "--frames", p(dir.path()), "--table", "unused.bin"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no frames found"));
}

#[test]
fn bad_table_magic_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("bad.bin");
    fs::write(&table, b"NOTAZOO!and some more bytes").unwrap();
    let o = srzoo(&["transfer-matrix", "--table", p(&table)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn unknown_flag_exits_2() {
    let o = srzoo(&["simulate", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bandwidth_scenarios() {
    let ok = srzoo(&["bandwidth", "--scenario", p(&data("bandwidth_1080p.toml"))]);
    assert!(ok.status.success(), "{}", stderr(&ok));
    assert!(stdout(&ok).contains("rate_mbps=1.6800") && stdout(&ok).contains("feasible=true"));
    let stress = srzoo(&["bandwidth", "--scenario", p(&data("bandwidth_stress.toml"))]);
    assert!(stdout(&stress).contains("feasible=false"), "{}", stdout(&stress));
}
