#![allow(dead_code)]

use std::path::{Path, PathBuf};

pub const STAGES: &[&str] = &["ingest", "roots", "sample", "activations", "train", "evaluate", "analyze", "flag", "compare"];

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn run_stage(stage: &str, out: &Path, extra: &[&str]) -> i32 {
    let config = fixture("pipeline.toml");
    let mut args = vec!["planlens".to_string(), stage.to_string(), "-q".into(), "--config".into()];
    args.push(config.to_string_lossy().into_owned());
    args.push("--out".into());
    args.push(out.to_string_lossy().into_owned());
    args.extend(extra.iter().map(|s| s.to_string()));
    planlens_cli::run(args)
}

/// Runs ingest through compare into `out`, panicking on the first failing stage.
pub fn run_pipeline(out: &Path) {
    for stage in STAGES {
        assert_eq!(run_stage(stage, out, &[]), 0, "stage {stage} failed");
    }
}

/// Relative path and sha256 of every file under `dir`, sorted.
pub fn digests(dir: &Path) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, planlens::digest::sha256_hex(&std::fs::read(&p).unwrap())));
            }
        }
    }
    out.sort();
    out
}
