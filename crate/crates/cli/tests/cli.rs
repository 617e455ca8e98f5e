use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

use nke_core::nn::{load_checkpoint, Architecture};

fn nke(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nke"))
        .args(args)
        .env("NKE_THREADS", "1")
        .output()
        .expect("spawn nke")
}

fn ok(args: &[&str]) -> Output {
    let out = nke(args);
    assert!(
        out.status.success(),
        "nke {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Trains on 200 synthetic images for two epochs into `dir`.
fn trained(dir: &Path) -> std::path::PathBuf {
    ok(&[
        "train",
        "--dataset",
        "synthetic",
        "--epochs",
        "2",
        "--train-samples",
        "200",
        "--batch-size",
        "16",
        "--seed",
        "4",
        "--out",
        s(dir),
    ]);
    dir.join("model.nkem")
}

#[test]
fn zero_epoch_checkpoint_equals_initialization() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "train",
        "--dataset",
        "synthetic",
        "--epochs",
        "0",
        "--seed",
        "11",
        "--out",
        s(dir.path()),
    ]);
    let model = load_checkpoint(&dir.path().join("model.nkem")).unwrap();
    assert_eq!(model, Architecture::MnistCnn.build::<f32>(11));
    let metrics = std::fs::read_to_string(dir.path().join("train_metrics.csv")).unwrap();
    assert_eq!(metrics, "epoch,loss,train_accuracy\n");
    let record = std::fs::read_to_string(dir.path().join("run_config.txt")).unwrap();
    assert!(record.contains("seed = 11"));
}

#[test]
fn missing_data_is_reported_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let out = nke(&[
        "train",
        "--dataset",
        "mnist",
        "--data-dir",
        s(&missing),
        "--out",
        s(dir.path()),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(s(&missing)), "stderr: {err}");
}

#[test]
fn config_file_is_read_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# quick run\ndataset = synthetic\nepochs = 0\nseed = 2\n").unwrap();
    ok(&["train", "--config", s(&cfg), "--seed", "5", "--out", s(dir.path())]);
    let model = load_checkpoint(&dir.path().join("model.nkem")).unwrap();
    assert_eq!(model, Architecture::MnistCnn.build::<f32>(5));

    std::fs::write(&cfg, "dataset = synthetic\nwidth = 3\n").unwrap();
    let out = nke(&["train", "--config", s(&cfg), "--out", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));
}

#[test]
fn attack_dumps_images_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path());
    let out_dir = dir.path().join("attack");
    ok(&[
        "attack",
        "--dataset",
        "synthetic",
        "--seed",
        "4",
        "--checkpoint",
        s(&ckpt),
        "--indices",
        "0,7",
        "--epsilon-grid",
        "0:0.6:0.3",
        "--steps",
        "1,3",
        "--direction",
        "descend",
        "--out",
        s(&out_dir),
    ]);
    let original = std::fs::read(out_dir.join("00007_original.pgm")).unwrap();
    let identity = std::fs::read(out_dir.join("00007_descend_s3_e0.0000.pgm")).unwrap();
    assert_eq!(original, identity);
    assert!(out_dir.join("00000_descend_grid.pgm").exists());

    let mut rows = csv::Reader::from_path(out_dir.join("manifest.csv")).unwrap();
    let mut n = 0;
    for rec in rows.records() {
        let rec = rec.unwrap();
        let eps: f32 = rec[4].parse().unwrap();
        let linf: f32 = rec[8].parse().unwrap();
        assert!(linf <= eps + 1e-6, "linf {linf} > eps {eps}");
        assert!(out_dir.join(&rec[10]).exists());
        n += 1;
    }
    assert_eq!(n, 2 * 2 * 3);

    let bad = nke(&[
        "attack",
        "--dataset",
        "synthetic",
        "--seed",
        "4",
        "--checkpoint",
        s(&ckpt),
        "--indices",
        "900",
        "--out",
        s(&out_dir),
    ]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("0..500"));
}

#[test]
fn sweep_is_deterministic_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path());
    let run = |name: &str, grid: &str| {
        let out = dir.path().join(name);
        ok(&[
            "sweep",
            "--dataset",
            "synthetic",
            "--seed",
            "4",
            "--checkpoint",
            s(&ckpt),
            "--epsilon-grid",
            grid,
            "--steps",
            "1,3,5",
            "--samples",
            "40",
            "--out",
            s(&out),
        ]);
        out
    };
    let zero = run("zero", "0:0:0.1");
    let mut reader = csv::Reader::from_path(zero.join("curves.csv")).unwrap();
    let records: Vec<_> = reader.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 2 * 3);
    assert!(records.iter().all(|r| &r[6] == "1.000000"));

    let a = run("a", "0:0.4:0.2");
    let b = run("b", "0:0.4:0.2");
    let csv_a = std::fs::read(a.join("curves.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(b.join("curves.csv")).unwrap());
    assert_eq!(
        std::fs::read(a.join("curves.svg")).unwrap(),
        std::fs::read(b.join("curves.svg")).unwrap()
    );
    let rows = csv::Reader::from_reader(csv_a.as_slice()).records().count();
    assert_eq!(rows, 3 * 2 * 3);
}

#[test]
fn render_draws_one_polyline_per_series() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("curves.csv");
    std::fs::write(
        &csv_path,
        "dataset,attack,steps,epsilon,n_samples,n_retained,retention\n\
         mnist,ascend,1,0.0000,10,10,1.000000\n\
         mnist,ascend,1,0.5000,10,1,0.100000\n\
         mnist,descend,1,0.0000,10,10,1.000000\n\
         mnist,descend,1,0.5000,10,8,0.800000\n\
         mnist,descend,5,0.0000,10,10,1.000000\n\
         mnist,descend,5,0.5000,10,10,1.000000\n",
    )
    .unwrap();
    let out = dir.path().join("plot");
    ok(&["render", s(&csv_path), "--out", s(&out)]);
    let svg = std::fs::read_to_string(out.join("curves.svg")).unwrap();

    let pairs: BTreeSet<(String, String)> = csv::Reader::from_path(&csv_path)
        .unwrap()
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[1].to_string(), r[2].to_string())
        })
        .collect();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let polylines = doc.descendants().filter(|n| n.has_tag_name("polyline")).count();
    assert_eq!(polylines, pairs.len());

    let bad = dir.path().join("bad.csv");
    std::fs::write(
        &bad,
        "dataset,attack,steps,epsilon,n_samples,n_retained,retention\nmnist,descend,x\n",
    )
    .unwrap();
    let out = nke(&["render", s(&bad), "--out", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}
