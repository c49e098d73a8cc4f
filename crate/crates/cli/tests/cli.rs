//! End-to-end tests driving the compiled binary through the full
//! pipeline: schedule export, phantom generation, a short training run,
//! inpainting, evaluation and a two-point benchmark.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wdiff3d"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawning wdiff3d");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn no_arguments_is_a_usage_error() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.to_lowercase().contains("usage"), "stderr: {stderr}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = bin()
        .args(["schedule", "--kind", "vp", "--T", "2", "--frobnicate", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn domain_error_exits_one_with_diagnostic() {
    let out = bin()
        .args(["schedule", "--kind", "vp", "--T", "0", "--out", "/tmp/never.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn schedule_exports_expected_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let out = run_ok(bin().args([
        "schedule",
        "--kind",
        "vp",
        "--T",
        "2",
        "--out",
        csv.to_str().unwrap(),
    ]));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("fully_perturbed=true"), "stdout: {stdout}");

    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3, "expected header + 2 data rows");
    let final_row: Vec<&str> = lines[2].split(',').collect();
    let alpha_bar: f64 = final_row[5].parse().unwrap();
    assert!((alpha_bar - 4.318e-5).abs() < 1e-7, "alpha_bar(2) = {alpha_bar}");
}

#[test]
fn schedule_rejects_unknown_kind() {
    let out = bin()
        .args(["schedule", "--kind", "cosine", "--T", "4", "--out", "/tmp/never.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

fn make_phantoms(dir: &Path, count: usize, dims: usize, seed: u64) {
    run_ok(bin().args([
        "make-phantoms",
        "--out",
        dir.to_str().unwrap(),
        "--count",
        &count.to_string(),
        "--dims",
        &dims.to_string(),
        "--seed",
        &seed.to_string(),
        "--mask-radius-min",
        "2",
        "--mask-radius-max",
        "3",
    ]));
}

#[test]
fn make_phantoms_writes_triplets_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    make_phantoms(dir.path(), 3, 16, 5);
    let manifest = std::fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
    let lines: Vec<&str> = manifest.lines().collect();
    assert_eq!(lines[0], "id,seed,g_path,m_path,v_path");
    assert_eq!(lines.len(), 4);
    for row in &lines[1..] {
        let fields: Vec<&str> = row.split(',').collect();
        for path in &fields[2..5] {
            assert!(dir.path().join(path).exists(), "missing {path}");
        }
    }
}

#[test]
fn make_phantoms_is_deterministic() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    make_phantoms(dir_a.path(), 1, 16, 9);
    make_phantoms(dir_b.path(), 1, 16, 9);
    let a = std::fs::read(dir_a.path().join("phantom_000_g.fw3d")).unwrap();
    let b = std::fs::read(dir_b.path().join("phantom_000_g.fw3d")).unwrap();
    assert_eq!(a, b);
}

/// The full pipeline at toy scale: phantoms -> train -> inpaint -> eval
/// -> bench.
#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    make_phantoms(&data, 2, 16, 1);

    // short training run through a config file, one flag overridden
    let config = dir.path().join("train.conf");
    std::fs::write(
        &config,
        "steps = 40\nT = 2\nkind = vp\nbatch-size = 1\nlr = 1e-3\nhidden-channels = 8\nseed = 3\n",
    )
    .unwrap();
    let ckpt = dir.path().join("model.fwck");
    let history = dir.path().join("history.csv");
    run_ok(bin().args([
        "train",
        "--data",
        data.join("manifest.csv").to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--history",
        history.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--steps",
        "30", // overrides steps = 40 from the file
    ]));
    assert!(ckpt.exists());
    let history_text = std::fs::read_to_string(&history).unwrap();
    assert_eq!(history_text.lines().count(), 31, "header + 30 rows");
    assert!(history_text.starts_with("step,t_drawn,l_recon,l_masked,total"));

    // inpaint one voided phantom
    let v = data.join("phantom_000_v.fw3d");
    let m = data.join("phantom_000_m.fw3d");
    let g = data.join("phantom_000_g.fw3d");
    let pred = dir.path().join("pred.fw3d");
    run_ok(bin().args([
        "inpaint",
        "--model",
        ckpt.to_str().unwrap(),
        "--in",
        v.to_str().unwrap(),
        "--mask",
        m.to_str().unwrap(),
        "--out",
        pred.to_str().unwrap(),
        "--kind",
        "vp",
        "--T",
        "2",
        "--seed",
        "11",
    ]));
    assert!(pred.exists());

    // determinism: the same seed reproduces the same bytes
    let pred2 = dir.path().join("pred2.fw3d");
    run_ok(bin().args([
        "inpaint",
        "--model",
        ckpt.to_str().unwrap(),
        "--in",
        v.to_str().unwrap(),
        "--mask",
        m.to_str().unwrap(),
        "--out",
        pred2.to_str().unwrap(),
        "--kind",
        "vp",
        "--T",
        "2",
        "--seed",
        "11",
    ]));
    assert_eq!(
        std::fs::read(&pred).unwrap(),
        std::fs::read(&pred2).unwrap()
    );

    // evaluate prediction against ground truth, whole + masked rows
    let report = dir.path().join("report.csv");
    let out = run_ok(bin().args([
        "eval",
        "--pred",
        pred.to_str().unwrap(),
        "--gt",
        g.to_str().unwrap(),
        "--mask",
        m.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("volume_id,region,ssim,mse,psnr,data_range"));
    let report_text = std::fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = report_text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].contains(",whole,"));
    assert!(lines[2].contains(",masked,"));

    // two-point benchmark; just validate the CSV contract at toy scale
    let bench_csv = dir.path().join("bench.csv");
    let out = run_ok(bin().args([
        "bench",
        "--model",
        ckpt.to_str().unwrap(),
        "--in",
        v.to_str().unwrap(),
        "--mask",
        m.to_str().unwrap(),
        "--T",
        "2,8",
        "--runs",
        "5",
        "--out",
        bench_csv.to_str().unwrap(),
    ]));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("T,runs,median_seconds,min_seconds,max_seconds"));
    let bench_text = std::fs::read_to_string(&bench_csv).unwrap();
    let rows: Vec<&str> = bench_text.lines().collect();
    assert_eq!(rows.len(), 3);
    let t2: Vec<&str> = rows[1].split(',').collect();
    let t8: Vec<&str> = rows[2].split(',').collect();
    assert_eq!(t2[0], "2");
    assert_eq!(t8[0], "8");
    let m2: f64 = t2[2].parse().unwrap();
    let m8: f64 = t8[2].parse().unwrap();
    assert!(m8 > m2, "T=8 median {m8} not above T=2 median {m2}");
}

#[test]
fn eval_errors_on_missing_file() {
    let out = bin()
        .args([
            "eval",
            "--pred",
            "/tmp/does-not-exist.fw3d",
            "--gt",
            "/tmp/also-missing.fw3d",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
