use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use vidseg::dataio::load_dataset;
use vidseg::metrics::evaluate;

fn vidseg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vidseg"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn vidseg")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = vidseg(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const FAST: &str = "[priming]\nepochs = 1\n[approximating]\nepochs = 1\n[joint]\nepochs = 1\n";
const COSTS: &str = "cost_prime = 1.0\ncost_approx = 0.1\ncost_ensemble = 0.1\n";

fn small_dataset(dir: &Path) {
    ok(
        dir,
        &[
            "generate",
            "--out",
            "ds",
            "--sequences",
            "3",
            "--frames",
            "6",
            "--width",
            "32",
            "--height",
            "24",
        ],
    );
}

fn trained(dir: &Path) {
    small_dataset(dir);
    fs::write(dir.join("fast.toml"), FAST).unwrap();
    fs::write(dir.join("cm.toml"), COSTS).unwrap();
    for stage in ["priming", "joint"] {
        ok(
            dir,
            &[
                "--config",
                "fast.toml",
                "train",
                "ds",
                "--stage",
                stage,
                "--checkpoints",
                "ck",
            ],
        );
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(vidseg(d, &["--help"]).status.code(), Some(0));
    assert_eq!(vidseg(d, &["--version"]).status.code(), Some(0));
    assert_eq!(vidseg(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        vidseg(d, &["density", "x", "--nope"]).status.code(),
        Some(1)
    );
    assert_eq!(vidseg(d, &["budget"]).status.code(), Some(1));
    assert_eq!(
        vidseg(d, &["--threads", "0", "budget"]).status.code(),
        Some(1)
    );
    let missing = vidseg(d, &["density", "does-not-exist"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("does-not-exist"));
}

#[test]
fn every_subcommand_documents_its_flags() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in [
        "generate", "density", "subn", "train", "run", "budget", "eval",
    ] {
        let help = ok(dir.path(), &[cmd, "-h"]);
        let lines: Vec<&str> = help.lines().map(str::trim).collect();
        for (i, line) in lines
            .iter()
            .enumerate()
            .filter(|(_, l)| l.starts_with("--"))
        {
            let inline = line.split_whitespace().count() > 1 + usize::from(line.contains('<'));
            let next = lines.get(i + 1).copied().unwrap_or("");
            let below = !next.is_empty() && !next.starts_with('-');
            assert!(inline || below, "{cmd}: no description for {line}");
        }
    }
}

#[test]
fn density_and_subn_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_dataset(d);
    let density = ok(d, &["density", "ds"]);
    let all = density.lines().last().unwrap();
    // the bonnet is 24 / 16 = 1 row
    assert_eq!(all, "all,0.958333,30.000000,13248,13824,18,18");
    let subn = ok(d, &["subn", "ds", "--strides", "1,2"]);
    let mut lines = subn.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("stride,miou,class_avg_accuracy,iou_road"));
    assert!(lines.next().unwrap().starts_with("1,1.000000,1.000000,"));
    assert_eq!(ok(d, &["subn", "ds", "--strides", "1,2"]), subn);
}

#[test]
fn budget_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cm.toml"), COSTS).unwrap();
    let csv = ok(
        d,
        &["budget", "--cost-model", "cm.toml", "--periods", "1,5"],
    );
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[1], "1,1.000000,1.000000,0.100000,0.100000,");
    assert_eq!(rows[2], "5,0.360000,1.000000,0.100000,0.100000,");
}

#[test]
fn train_run_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    for f in [
        "priming.ckpt",
        "approx_alone.ckpt",
        "approximating.ckpt",
        "ensemble.ckpt",
    ] {
        assert!(d.join("ck").join(f).exists(), "{f}");
    }
    let run = |out: &str, period: &str| {
        ok(
            d,
            &[
                "run",
                "ds",
                "--checkpoints",
                "ck",
                "--cost-model",
                "cm.toml",
                "--period",
                period,
                "--split",
                "all",
                "--out",
                out,
            ],
        )
    };
    run("r2", "2");
    let metrics = fs::read_to_string(d.join("r2/metrics.csv")).unwrap();
    assert!(metrics.lines().last().unwrap().ends_with(",0.600000"));
    let trace = fs::read_to_string(d.join("r2/cost_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 18);
    assert!(d.join("r2/cost_model.toml").exists());

    // scoring the saved predictions reproduces the run's numbers
    let eval = ok(
        d,
        &[
            "eval",
            "ds",
            "--predictions",
            "r2/predictions",
            "--split",
            "all",
        ],
    );
    let strip = |s: &str| {
        s.lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&eval), strip(&metrics));

    // k = 1 is per-frame priming
    run("r1", "1");
    let ds = load_dataset(&d.join("ds"), false).unwrap();
    let net = vidseg::cli::load_networks(&d.join("ck"), &ds.table)
        .unwrap()
        .priming;
    let mut pairs = Vec::new();
    let mut preds = Vec::new();
    for s in &ds.sequences {
        preds.push(vidseg::pipeline::prime_sequence(s, &net, &ds.table).unwrap());
    }
    for (s, p) in ds.sequences.iter().zip(&preds) {
        for (f, l) in s.frames.iter().zip(p) {
            pairs.push((f.label.as_ref().unwrap(), l));
        }
    }
    let direct = evaluate(pairs, &ds.table).unwrap();
    let csv = vidseg::report::metrics_csv(&direct, Some(1.0)).unwrap();
    assert_eq!(fs::read_to_string(d.join("r1/metrics.csv")).unwrap(), csv);
}

#[test]
fn eval_identical_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_dataset(d);
    let ds = load_dataset(&d.join("ds"), false).unwrap();
    let gt = ds
        .ids
        .iter()
        .zip(&ds.sequences)
        .map(|(id, s)| (id.clone(), s.labels().cloned().collect()))
        .collect();
    vidseg::dataio::save_predictions(&d.join("gt"), &gt).unwrap();
    let csv = ok(d, &["eval", "ds", "--predictions", "gt"]);
    assert_eq!(csv.lines().last().unwrap(), "mean,,,1.000000,1.000000,");
}
