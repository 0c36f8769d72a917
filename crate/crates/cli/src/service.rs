//! Read-only JSON API over the analysis artifacts.
//!
//! All data is loaded once at startup; [`ServeState::route`] is a pure function of the
//! request path and query, which the HTTP layer only wraps.

use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use planlens::agent::Agent;
use planlens::analysis::{
    cluster_entropies, feature_pair_similarity, record_heatmap, top_activating_samples, Heatmap, SampleClustering,
};
use planlens::csae::Checkpoint;
use planlens::dataset::TrajectoryStore;
use planlens::metrics::{FeatureActivationTable, FeatureSet};
use planlens::sampler::Optimality;

use crate::commands::{read_json, AnalysisMeta, Context, DendrogramFile, FeatureSummary, Provenance, Stamped, ANALYSIS_DIR};
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;
const MAX_K: usize = 256;
const MAX_PAGE_SIZE: usize = 500;

pub struct ServeState {
    pub provenance: Provenance,
    pub meta: AnalysisMeta,
    pub features: Vec<FeatureSummary>,
    pub table: FeatureActivationTable,
    pub dendrogram: DendrogramFile,
    pub samples_c: SampleClustering,
    pub samples_d: SampleClustering,
    pub store: TrajectoryStore,
    pub checkpoint: Checkpoint,
    pub agent: Agent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Value,
}

impl ApiResponse {
    fn ok(body: impl Serialize) -> ApiResponse {
        ApiResponse { status: 200, body: serde_json::to_value(body).expect("serializable response") }
    }

    fn error(status: u16, message: impl Into<String>) -> ApiResponse {
        ApiResponse { status, body: json!({ "error": message.into() }) }
    }

    pub fn bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.body).expect("serializable response")
    }
}

#[derive(serde::Deserialize)]
struct FeaturesFile {
    features: Vec<FeatureSummary>,
}

type Query = HashMap<String, String>;

fn parse_query(q: &str) -> Query {
    form_urlencoded::parse(q.as_bytes()).into_owned().collect()
}

fn param<T: std::str::FromStr>(q: &Query, key: &str, default: Option<T>) -> Result<T, ApiResponse> {
    match (q.get(key), default) {
        (Some(v), _) => v.parse().map_err(|_| ApiResponse::error(400, format!("malformed `{key}`: {v:?}"))),
        (None, Some(d)) => Ok(d),
        (None, None) => Err(ApiResponse::error(400, format!("missing `{key}`"))),
    }
}

const ENDPOINTS: &[(&str, &str, &str)] = &[
    ("/api/meta", "", "schema version, provenance digests and endpoint list"),
    ("/api/features", "sort=frequency|entropy|trajectory_entropy|id, set=c|d|f, page, page_size, unwanted=any|only|none", "paged feature summaries"),
    ("/api/features/{id}", "", "frequency, entropies, unwanted flags and cluster of one feature"),
    ("/api/features/{id}/top", "k (default 16)", "top activating samples with boards"),
    ("/api/features/{id}/heatmap", "board=<sample id>", "root and trajectory 8x8 activation grids"),
    ("/api/dendrogram", "", "feature dendrogram tree and linkage"),
    ("/api/clusters/{cut}/entropies", "set=c|d (default c)", "per-cluster entropies of the sample clustering cut into {cut} clusters"),
    ("/api/compare", "fa, fb, k (default 16)", "activation correlation and top-k overlap of two features"),
];

impl ServeState {
    pub fn load(ctx: &Context) -> Result<ServeState, CliError> {
        let dir = ctx.path(ANALYSIS_DIR);
        let meta: Stamped<AnalysisMeta> = read_json(&dir.join("analysis.json"))?;
        let features: Stamped<FeaturesFile> = read_json(&dir.join("features.json"))?;
        let dendrogram: Stamped<DendrogramFile> = read_json(&dir.join("dendrogram.json"))?;
        let table: FeatureActivationTable = read_json(&dir.join("table.json"))?;
        let checkpoint = Checkpoint::load(&ctx.path(crate::commands::CHECKPOINT_FILE), None)?;
        let agent = ctx.agent()?;
        if checkpoint.params.dim() != 2 * agent.channels() {
            return Err(CliError::Data(planlens::Error::ShapeMismatch(format!(
                "checkpoint width {} vs agent width {}",
                checkpoint.params.dim(),
                2 * agent.channels()
            ))));
        }
        Ok(ServeState {
            provenance: meta.provenance,
            meta: meta.body,
            features: features.body.features,
            table,
            dendrogram: dendrogram.body,
            samples_c: read_json(&dir.join("samples_c.json"))?,
            samples_d: read_json(&dir.join("samples_d.json"))?,
            store: TrajectoryStore::load(&ctx.dataset_dir())?,
            checkpoint,
            agent,
        })
    }

    pub fn route(&self, path: &str, query: &str) -> ApiResponse {
        let q = parse_query(query);
        let parts: Vec<&str> = path.trim_end_matches('/').split('/').skip(1).collect();
        let result = match parts.as_slice() {
            ["api", "meta"] => Ok(self.meta_response()),
            ["api", "features"] => self.feature_list(&q),
            ["api", "features", id] => self.feature_id(id).map(|f| ApiResponse::ok(&self.features[f])),
            ["api", "features", id, "top"] => self.feature_id(id).and_then(|f| self.top(f, &q)),
            ["api", "features", id, "heatmap"] => self.feature_id(id).and_then(|f| self.heatmap(f, &q)),
            ["api", "dendrogram"] => Ok(self.dendrogram_response()),
            ["api", "clusters", cut, "entropies"] => self.entropies(cut, &q),
            ["api", "compare"] => self.compare(&q),
            _ => Err(ApiResponse::error(404, format!("no endpoint {path}"))),
        };
        result.unwrap_or_else(|e| e)
    }

    fn meta_response(&self) -> ApiResponse {
        let endpoints: Vec<Value> =
            ENDPOINTS.iter().map(|(p, params, d)| json!({ "path": p, "params": params, "description": d })).collect();
        ApiResponse::ok(json!({
            "schema_version": SCHEMA_VERSION,
            "provenance": self.provenance,
            "analysis": self.meta,
            "endpoints": endpoints,
        }))
    }

    fn feature_id(&self, s: &str) -> Result<usize, ApiResponse> {
        let id: usize = s.parse().map_err(|_| ApiResponse::error(400, format!("malformed feature id {s:?}")))?;
        if id >= self.features.len() {
            return Err(ApiResponse::error(404, format!("no feature {id}")));
        }
        Ok(id)
    }

    fn feature_list(&self, q: &Query) -> Result<ApiResponse, ApiResponse> {
        let set = match q.get("set") {
            Some(s) => FeatureSet::parse(s).map_err(|e| ApiResponse::error(400, e.to_string()))?,
            None => FeatureSet::F,
        };
        let page: usize = param(q, "page", Some(0))?;
        let page_size: usize = param(q, "page_size", Some(50))?;
        if page_size == 0 || page_size > MAX_PAGE_SIZE {
            return Err(ApiResponse::error(400, format!("page_size must be in 1..={MAX_PAGE_SIZE}")));
        }
        let unwanted = q.get("unwanted").map_or("any", String::as_str);
        let mut list: Vec<&FeatureSummary> = self
            .table
            .range(set)
            .map(|i| &self.features[i])
            .filter(|f| match unwanted {
                "only" => !f.flags.is_empty(),
                "none" => f.flags.is_empty(),
                _ => true,
            })
            .collect();
        if !matches!(unwanted, "any" | "only" | "none") {
            return Err(ApiResponse::error(400, format!("unknown unwanted filter {unwanted:?}")));
        }
        let by_entropy = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        };
        match q.get("sort").map_or("frequency", String::as_str) {
            "frequency" => list.sort_by(|a, b| b.frequency.total_cmp(&a.frequency).then(a.id.cmp(&b.id))),
            "entropy" => list.sort_by(|a, b| by_entropy(a.h_squares, b.h_squares).then(a.id.cmp(&b.id))),
            "trajectory_entropy" => list.sort_by(|a, b| by_entropy(a.h_trajectories, b.h_trajectories).then(a.id.cmp(&b.id))),
            "id" => {}
            other => return Err(ApiResponse::error(400, format!("unknown sort {other:?}"))),
        }
        let total = list.len();
        let items: Vec<&FeatureSummary> = list.into_iter().skip(page * page_size).take(page_size).collect();
        Ok(ApiResponse::ok(json!({ "total": total, "page": page, "page_size": page_size, "features": items })))
    }

    fn top(&self, feature: usize, q: &Query) -> Result<ApiResponse, ApiResponse> {
        let k: usize = param(q, "k", Some(16))?;
        if k == 0 || k > MAX_K {
            return Err(ApiResponse::error(400, format!("k must be in 1..={MAX_K}")));
        }
        let top = top_activating_samples(&self.table, feature, k)
            .map_err(|e| ApiResponse::error(400, e.to_string()))?
            .with_boards(&self.store);
        let samples: Vec<Value> = top
            .samples
            .iter()
            .map(|s| {
                json!({
                    "sample": s.sample,
                    "activation": s.activation,
                    "fen": s.fen,
                    "root_fen": s.root_fen,
                    "square": s.meta.square,
                    "optimality": match s.meta.flag { Optimality::Optimal => "optimal", Optimality::Suboptimal => "suboptimal" },
                    "depth": s.meta.depth,
                    "root_id": s.meta.root_id,
                    "traj_id": s.meta.traj_id,
                })
            })
            .collect();
        Ok(ApiResponse::ok(json!({ "feature": feature, "k": k, "samples": samples, "provenance": self.provenance })))
    }

    fn heatmap(&self, feature: usize, q: &Query) -> Result<ApiResponse, ApiResponse> {
        let board: usize = param(q, "board", None)?;
        if board >= self.table.len() {
            return Err(ApiResponse::error(404, format!("no board {board}")));
        }
        let meta = self.table.samples[board];
        let maps = record_heatmap(&self.checkpoint.params, &self.agent, self.meta.layer, &self.store, &meta, feature)
            .map_err(|e| ApiResponse::error(404, e.to_string()))?;
        let grid = |h: &Heatmap| json!({ "fen": h.fen, "grid": h.grid(), "mirrored": h.mirrored, "max": h.max() });
        Ok(ApiResponse::ok(json!({
            "feature": feature,
            "board": board,
            "square": meta.square,
            "stored_activation": self.table.activation(board, feature),
            "root": grid(&maps.root),
            "trajectory": grid(&maps.trajectory),
            "provenance": self.provenance,
        })))
    }

    fn dendrogram_response(&self) -> ApiResponse {
        let c = &self.dendrogram.clustering;
        ApiResponse::ok(json!({
            "leaves": c.features.len(),
            "features": c.features,
            "labels": c.labels,
            "merges": c.tree.merges,
            "tree": self.dendrogram.tree,
            "provenance": self.provenance,
        }))
    }

    fn entropies(&self, cut: &str, q: &Query) -> Result<ApiResponse, ApiResponse> {
        let n: usize = cut.parse().map_err(|_| ApiResponse::error(400, format!("malformed cut {cut:?}")))?;
        let clustering = match q.get("set").map_or("c", String::as_str) {
            "c" => &self.samples_c,
            "d" => &self.samples_d,
            other => return Err(ApiResponse::error(400, format!("unknown set {other:?}"))),
        };
        if n == 0 || n > clustering.samples.len() {
            return Err(ApiResponse::error(400, format!("cut must be in 1..={}", clustering.samples.len())));
        }
        let labels = clustering.tree.cut(n);
        let metas: Vec<_> = clustering.samples.iter().map(|&s| self.table.samples[s]).collect();
        let report = cluster_entropies(&labels, &metas).map_err(|e| ApiResponse::error(400, e.to_string()))?;
        Ok(ApiResponse::ok(json!({ "set": clustering.set, "cut": n, "report": report, "provenance": self.provenance })))
    }

    fn compare(&self, q: &Query) -> Result<ApiResponse, ApiResponse> {
        let fa = self.feature_id(&param::<String>(q, "fa", None)?)?;
        let fb = self.feature_id(&param::<String>(q, "fb", None)?)?;
        let k: usize = param(q, "k", Some(16))?;
        if k == 0 || k > MAX_K {
            return Err(ApiResponse::error(400, format!("k must be in 1..={MAX_K}")));
        }
        let s = feature_pair_similarity(&self.table, &self.table, fa, fb, k).map_err(|e| ApiResponse::error(400, e.to_string()))?;
        Ok(ApiResponse::ok(json!({ "fa": fa, "fb": fb, "k": k, "correlation": s.correlation, "overlap": s.overlap })))
    }
}

async fn handle(
    axum::extract::State(state): axum::extract::State<std::sync::Arc<ServeState>>,
    method: axum::http::Method,
    uri: axum::http::Uri,
) -> axum::response::Response {
    use axum::response::IntoResponse;
    let r = if method == axum::http::Method::GET {
        state.route(uri.path(), uri.query().unwrap_or(""))
    } else {
        ApiResponse::error(405, "read-only service")
    };
    let status = axum::http::StatusCode::from_u16(r.status).unwrap_or(axum::http::StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(axum::http::header::CONTENT_TYPE, "application/json")], r.bytes()).into_response()
}

pub fn router(state: ServeState) -> axum::Router {
    axum::Router::new().fallback(handle).with_state(std::sync::Arc::new(state))
}

pub fn serve(ctx: &Context, bind: Option<&str>) -> Result<(), CliError> {
    let state = ServeState::load(ctx)?;
    let addr = bind.unwrap_or(&ctx.cfg.serve.bind).to_string();
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await?;
        log::info!("serving {} features on http://{addr}/api/meta", state.features.len());
        axum::serve(listener, router(state)).await
    })?;
    Ok(())
}

/// Loads the state for an artifact directory without a config file on hand.
pub fn load_state(cfg: crate::PipelineConfig, out: &Path) -> Result<ServeState, CliError> {
    ServeState::load(&Context { cfg, out: out.to_path_buf() })
}
