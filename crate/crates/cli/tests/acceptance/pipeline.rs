use std::path::Path;
use std::process::Command;

use planlens_cli::service::load_state;
use planlens_cli::PipelineConfig;

use super::{digests, ensure, fixture, Outcome};

const STAGES: &[&str] = &["ingest", "roots", "sample", "activations", "train", "evaluate", "sweep", "analyze", "flag", "compare", "tournament"];

const REQUESTS: &[(&str, &str)] = &[
    ("/api/meta", ""),
    ("/api/features", "sort=entropy&page_size=100"),
    ("/api/features/5", ""),
    ("/api/features/5/top", "k=16"),
    ("/api/features/5/heatmap", "board=3"),
    ("/api/dendrogram", ""),
    ("/api/clusters/4/entropies", "set=d"),
    ("/api/compare", "fa=2&fb=20"),
];

fn run_all(out: &Path) -> Result<Vec<Vec<u8>>, String> {
    let config = fixture("pipeline.toml");
    for stage in STAGES {
        let o = Command::new(env!("CARGO_BIN_EXE_planlens"))
            .args([stage, "-q", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .args(if *stage == "sweep" { &["--lambdas", "1e-3,1e-2,1e-1,1"][..] } else { &[] })
            .output()
            .map_err(|e| e.to_string())?;
        ensure(o.status.success(), format!("{stage} exited with {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)))?;
    }
    let cfg = PipelineConfig::load(&config).map_err(|e| e.to_string())?;
    let state = load_state(cfg, out).map_err(|e| e.to_string())?;
    REQUESTS
        .iter()
        .map(|(p, q)| {
            let r = state.route(p, q);
            ensure(r.status == 200, format!("{p}?{q} returned {}", r.status))?;
            Ok(r.bytes())
        })
        .collect()
}

pub fn end_to_end() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let served_a = run_all(a.path())?;
    let served_b = run_all(b.path())?;
    let (da, db) = (digests(a.path()), digests(b.path()));
    ensure(da.len() >= 25, format!("only {} artifacts", da.len()))?;
    if let Some(((name, _), _)) = da.iter().zip(&db).find(|(x, y)| x != y) {
        return Err(format!("artifact {name} differs between runs"));
    }
    ensure(da.len() == db.len(), "artifact sets differ")?;
    ensure(served_a == served_b, "API responses differ between runs")?;
    Ok(format!("{} stages + {} API requests, {} artifacts with identical digests across two runs", STAGES.len(), REQUESTS.len(), da.len()))
}
