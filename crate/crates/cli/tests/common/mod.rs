#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn exprmap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exprmap"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn exprmap")
}

/// Runs a command and fails with its stderr when it does not exit 0.
pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = exprmap(dir, args);
    assert!(
        out.status.success(),
        "exprmap {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

pub struct PipelineSpec<'a> {
    pub rig_seed: u64,
    pub vertices: usize,
    pub train_samples: usize,
    pub sample_seed: u64,
    pub test_samples: usize,
    pub test_seed: u64,
    /// Extra `train` flags.
    pub train_flags: &'a [&'a str],
}

/// Files every pipeline run writes, in a fixed order.
pub const PIPELINE_FILES: [&str; 16] = [
    "human.json", "anime.json", "gt.csv", "adapter.json", "test.csv", "labels.csv", "zero.csv", "model.json",
    "history.csv", "poses.csv", "zero_poses.csv", "driving.csv", "neutral_driving.csv", "predicted.csv", "neutral_predicted.csv",
    "kdr.csv",
];

/// gen-rig, fit-adapter, train, translate, keypoints and eval-kdr in `dir`.
/// Returns the KDR printed on stdout.
pub fn run_pipeline(dir: &Path, s: &PipelineSpec) -> String {
    let seed = s.rig_seed.to_string();
    let vertices = s.vertices.to_string();
    ok(dir, &["gen-rig", "--seed", &seed, "--vertices", &vertices, "--out-human", "human.json",
        "--out-anime", "anime.json", "--out-ground-truth", "gt.csv"]);
    ok(dir, &["fit-adapter", "--human-rig", "human.json", "--anime-rig", "anime.json", "--out", "adapter.json"]);
    let (n, ts) = (s.test_samples.to_string(), s.test_seed.to_string());
    ok(dir, &["gen-samples", "--n", &n, "--seed", &ts, "--out", "test.csv", "--ground-truth", "gt.csv",
        "--out-labels", "labels.csv"]);
    ok(dir, &["gen-samples", "--n", "1", "--seed", "0", "--zeros", "--out", "zero.csv"]);
    let (gen, ss) = (s.train_samples.to_string(), s.sample_seed.to_string());
    let mut train = vec!["train", "--human-rig", "human.json", "--anime-rig", "anime.json", "--adapter",
        "adapter.json", "--gen-samples", &gen, "--sample-seed", &ss, "--out-model", "model.json",
        "--out-history", "history.csv", "--quiet"];
    train.extend_from_slice(s.train_flags);
    ok(dir, &train);
    ok(dir, &["translate", "--model", "model.json", "--adapter", "adapter.json", "--in", "test.csv", "--out", "poses.csv"]);
    ok(dir, &["translate", "--model", "model.json", "--adapter", "adapter.json", "--in", "zero.csv", "--out",
        "zero_poses.csv"]);
    ok(dir, &["keypoints", "--rig", "human.json", "--params", "test.csv", "--out", "driving.csv"]);
    ok(dir, &["keypoints", "--rig", "human.json", "--params", "zero.csv", "--out", "neutral_driving.csv"]);
    ok(dir, &["keypoints", "--rig", "anime.json", "--params", "poses.csv", "--out", "predicted.csv"]);
    ok(dir, &["keypoints", "--rig", "anime.json", "--params", "zero_poses.csv", "--out", "neutral_predicted.csv"]);
    ok(dir, &["eval-kdr", "--driving", "driving.csv", "--predicted", "predicted.csv", "--neutral-driving",
        "neutral_driving.csv", "--neutral-predicted", "neutral_predicted.csv", "--rig", "human.json", "--out", "kdr.csv"])
}

pub fn file(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
