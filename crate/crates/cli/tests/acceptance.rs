//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! `cargo test -p planlens-cli --test acceptance -- [name filters]`

#[path = "common/mod.rs"]
mod common;

#[path = "acceptance/analysis.rs"]
mod analysis;
#[path = "acceptance/chess.rs"]
mod chess;
#[path = "acceptance/csae.rs"]
mod csae;
#[path = "acceptance/sampler.rs"]
mod sampler;

use std::path::Path;
use std::time::{Duration, Instant};

use planlens_cli::commands::{self, Context};
use planlens_cli::PipelineConfig;

pub use common::{digests, fixture};

pub type Outcome = Result<String, String>;

pub fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// The fixture pipeline config, adjusted by `edit`, writing under `out`.
pub fn fixture_context(out: &Path, edit: impl FnOnce(&mut PipelineConfig)) -> Context {
    let mut cfg = PipelineConfig::load(&fixture("pipeline.toml")).expect("fixture config");
    edit(&mut cfg);
    Context { cfg, out: out.to_path_buf() }
}

pub fn run_command(ctx: &Context, stage: &str) -> Result<(), String> {
    let r = match stage {
        "ingest" => commands::ingest(ctx, &[]),
        "roots" => commands::roots(ctx),
        "activations" => commands::activations(ctx),
        "train" => commands::train(ctx),
        other => return Err(format!("unknown stage {other}")),
    };
    r.map_err(|e| format!("{stage}: {e}"))
}

const CRITERIA: &[(&str, u64, fn() -> Outcome)] = &[
    ("policy-index", 1, chess::policy_index),
    ("perft-and-planes", 30, chess::perft_and_planes),
    ("gradient-fidelity", 60, csae::gradients),
    ("dictionary-recovery", 600, csae::dictionary_recovery),
    ("planted-contrastive", 600, csae::planted_contrastive),
    ("lambda-sweep", 900, csae::lambda_monotonicity),
    ("sampler-contracts", 600, sampler::contracts),
    ("tournament", 600, sampler::tournament_sanity),
    ("metrics-oracles", 60, analysis::metrics_oracles),
    ("clustering", 120, analysis::clustering),
    ("end-to-end", 1200, pipeline::end_to_end),
];

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let (mut passed, mut failed) = (0, 0);
    for &(name, budget, check) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let budget = Duration::from_secs(budget);
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; over the {}s budget", budget.as_secs())),
            other => other,
        };
        match result {
            Ok(detail) => {
                passed += 1;
                println!("PASS {name:<20} {:>7.1}s  {detail}", elapsed.as_secs_f64());
            }
            Err(e) => {
                failed += 1;
                println!("FAIL {name:<20} {:>7.1}s  {e}", elapsed.as_secs_f64());
            }
        }
    }
    println!("acceptance: {passed} passed, {failed} failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
