mod common;

use std::path::Path;
use std::process::Command;

use arterylabel::geometry::{label_centerlines_with_classes, VoxelMask};
use arterylabel::model::{ArchConfig, Model};
use arterylabel::pipeline::{evaluate, evaluate_counts, CaseCounts, EvalConfig, MetricsReport};
use arterylabel::synth::{generate_dataset, LoadedCase, SynthConfig, NUM_CLASSES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cases(n: usize, seed: u64) -> Vec<LoadedCase> {
    generate_dataset(&SynthConfig::default(), n, seed, 1)
        .unwrap()
        .into_iter()
        .map(Into::into)
        .collect()
}

fn small_arch() -> ArchConfig {
    ArchConfig {
        channels: vec![8, 16],
        rates: vec![1, 4],
        blocks_per_stage: 1,
        neighbors_h: 8,
        num_classes_k: NUM_CLASSES,
        stem_channels: 8,
    }
}

#[test]
fn ground_truth_prediction_is_a_fixed_point() {
    let cs = cases(3, 21);
    let counts: Vec<CaseCounts> = cs
        .iter()
        .map(|c| {
            let lab = label_centerlines_with_classes(&c.centerlines, &c.mask, 1.0, NUM_CLASSES as u8).unwrap();
            CaseCounts::new(c.id.clone(), &c.mask, &c.mask, NUM_CLASSES, &c.centerlines, Some(&lab)).unwrap()
        })
        .collect();
    let r = MetricsReport::from_cases(&counts, NUM_CLASSES).unwrap();
    assert_eq!(r.voxel_accuracy, 1.0);
    assert_eq!((r.macro_precision, r.macro_recall, r.macro_f1), (1.0, 1.0, 1.0));
    assert_eq!(r.branch_accuracy, Some(1.0));
    assert_eq!(r.unassigned, 0);
    for s in r.per_class.iter().filter(|s| s.support > 0) {
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }
}

/// Per-class precision/recall/F1 recomputed from the two masks directly.
fn recount(truth: &VoxelMask, pred: &VoxelMask, k: u8) -> Vec<(f64, f64, f64, u64)> {
    (1..=k)
        .map(|c| {
            let mut tp = 0u64;
            let mut fp = 0u64;
            let mut fn_ = 0u64;
            for (&t, &p) in truth.labels.iter().zip(&pred.labels) {
                if t == 0 {
                    continue;
                }
                match (t == c, p == c) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    _ => {}
                }
            }
            let p = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
            let r = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
            let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            (p, r, f, tp + fn_)
        })
        .collect()
}

#[test]
fn metrics_match_an_independent_recount() {
    let cs = cases(2, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for c in &cs {
        // Corrupt a random 30% of the foreground.
        let mut pred = c.mask.clone();
        for l in pred.labels.iter_mut().filter(|l| **l != 0) {
            if rng.gen_bool(0.3) {
                *l = rng.gen_range(1..=NUM_CLASSES as u8);
            }
        }
        let counts = CaseCounts::new(c.id.clone(), &c.mask, &pred, NUM_CLASSES, &[], None).unwrap();
        let r = MetricsReport::from_cases(std::slice::from_ref(&counts), NUM_CLASSES).unwrap();
        let expected = recount(&c.mask, &pred, NUM_CLASSES as u8);
        for (s, e) in r.per_class.iter().zip(&expected) {
            assert_eq!((s.precision, s.recall, s.f1, s.support), *e, "class {}", s.class);
        }
        let (correct, total) = common::voxel_accuracy(&c.mask, &pred);
        assert_eq!(r.voxel_accuracy, correct as f64 / total as f64);
        let present: Vec<_> = expected.iter().filter(|e| e.3 > 0).collect();
        let macro_f1 = present.iter().map(|e| e.2).sum::<f64>() / present.len() as f64;
        assert!((r.macro_f1 - macro_f1).abs() < 1e-15);
        let hist = c.mask.histogram();
        for (row, &h) in r.confusion.iter().zip(&hist[1..]) {
            assert_eq!(row.iter().sum::<u64>(), h as u64);
        }
    }
}

#[test]
fn parallel_evaluation_equals_serial() {
    let cs = cases(3, 8);
    let model = Model::<f32>::new(small_arch(), 2).unwrap();
    let cfg = EvalConfig {
        sample_count: 512,
        ..EvalConfig::default()
    };
    let serial = evaluate_counts(&model, &cs, &cfg, 1).unwrap();
    let parallel = evaluate_counts(&model, &cs, &cfg, 3).unwrap();
    assert_eq!(serial, parallel);
    let r = evaluate(&model, &cs, &cfg, 2).unwrap();
    assert!((0.0..=1.0).contains(&r.voxel_accuracy));
    for s in &r.per_class {
        assert!((0.0..=1.0).contains(&s.precision) && (0.0..=1.0).contains(&s.recall));
    }
}

// ---- command line ----

fn cli(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_arterylabel"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

const TINY: &str = r#"{
  "arch": {"channels": [8, 16], "rates": [1, 2], "neighbors_h": 4, "stem_channels": 8},
  "train": {"epochs": 2, "batch_size": 2, "sample_count": 256, "lr": 0.05},
  "data": {"count": 3, "train": 2},
  "eval": {"sample_count": 256}
}"#;

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(cli(d, &["--no-such-flag"]).status.code(), Some(1));
    assert_eq!(cli(d, &[]).status.code(), Some(1));
    assert_eq!(cli(d, &["--help"]).status.code(), Some(0));
    assert_eq!(cli(d, &["eval", "--data", "nowhere", "--model", "none.ckpt"]).status.code(), Some(2));
    std::fs::write(d.join("bad.json"), "{\"arch\": {\"channels\": 3}}").unwrap();
    assert_eq!(cli(d, &["--config", "bad.json", "gradcheck"]).status.code(), Some(2));
}

#[test]
fn cli_end_to_end_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tiny.json"), TINY).unwrap();
    let ok = |args: &[&str]| {
        let out = cli(d, args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    ok(&["--config", "tiny.json", "--seed", "4", "--out", "data", "synth"]);
    ok(&["--config", "tiny.json", "--seed", "4", "--out", "a", "train", "--data", "data"]);
    ok(&["--config", "tiny.json", "--seed", "4", "--out", "b", "train", "--data", "data"]);
    let a = std::fs::read(d.join("a/model.ckpt")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b/model.ckpt")).unwrap());

    let report = ok(&["--config", "tiny.json", "--out", "ev", "eval", "--data", "data", "--model", "a/model.ckpt"]);
    assert!(report.contains("voxel accuracy"));
    let metrics: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("ev/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["cases"], 1);

    let labeled = ok(&[
        "--config", "tiny.json", "--out", "lab", "label",
        "--mask", "data/case_002.vmask",
        "--centerlines", "data/case_002.centerlines.json",
        "--model", "a/model.ckpt",
    ]);
    assert!(labeled.contains("overlap") || labeled.contains("UNASSIGNED"));
    assert!(d.join("lab/case_002.branches.json").exists());
    let truth = VoxelMask::read(&d.join("data/case_002.vmask")).unwrap();
    let pred = VoxelMask::read(&d.join("lab/case_002.labeled.vmask")).unwrap();
    assert_eq!(common::voxel_accuracy(&truth, &pred).1, truth.foreground_count() as u64);

    // Missing centerlines: voxel labels only.
    ok(&[
        "--config", "tiny.json", "--out", "lab2", "label",
        "--mask", "data/case_002.vmask", "--centerlines", "gone.json", "--model", "a/model.ckpt",
    ]);
    assert!(d.join("lab2/case_002.labeled.vmask").exists());
    assert!(!d.join("lab2/case_002.branches.json").exists());

    // Corrupt checkpoint magic: clean error, nothing written.
    let mut bad = a.clone();
    bad[0] ^= 0xff;
    std::fs::write(d.join("bad.ckpt"), bad).unwrap();
    let out = cli(d, &["--out", "lab3", "label", "--mask", "data/case_002.vmask", "--model", "bad.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
    assert!(!d.join("lab3").exists());
}
