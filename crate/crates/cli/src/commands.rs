//! One function per subcommand. Every stage reads and writes files under the artifact
//! directory, so stages can run in separate invocations.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use planlens::agent::Agent;
use planlens::analysis::{
    cluster_entropies, cluster_features, cluster_samples, compare_clusterings, cross_sae_overlap, dictionary_cosine_stats,
    flag_unwanted_features, shuffled_samples, ClusterConfig, ClusterReport, ClusteringComparison, CrossSaeReport,
    FeatureClustering, SaeTable, SampleClustering, UnwantedFlag, UnwantedKind,
};
use planlens::csae::{train_with, Checkpoint, TrainData, TrainingLog};
use planlens::dataset::{
    build_activation_dataset, extract_roots, ingest_pgn, DatasetManifest, IngestReport, PairSet,
    RootBoardRecord, Split,
};
use planlens::digest::sha256_hex;
use planlens::metrics::{
    all_entropies, fit_probe, frequency_histogram, l0_r2, lambda_sweep, metric_report, FeatureActivationTable, FeatureSet,
    LinearProbe, MetricReport, Partition, SweepResult, ACTIVATION_EPSILON,
};
use planlens::sampler::{default_openings, sample_pairs, tournament as play_tournament, ReportRow, Strategy, TournamentReport, TournamentResult};

use crate::config::PipelineConfig;
use crate::CliError;

pub const GAMES_FILE: &str = "games.json";
pub const ROOTS_FILE: &str = "roots.json";
pub const SAMPLES_FILE: &str = "samples.json";
pub const DATASET_DIR: &str = "dataset";
pub const CHECKPOINT_FILE: &str = "model.csae";
pub const ANALYSIS_DIR: &str = "analysis";

pub struct Context {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.path(DATASET_DIR)
    }

    pub fn checkpoint_path(&self, explicit: Option<&Path>) -> PathBuf {
        explicit.map_or_else(|| self.path(CHECKPOINT_FILE), Path::to_path_buf)
    }

    pub fn agent(&self) -> Result<Agent, CliError> {
        Ok(self.cfg.agent.build()?)
    }

    fn ensure_out(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out)?;
        Ok(())
    }
}

/// Digests of everything an artifact was derived from; empty fields are unknown or unused.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: String,
    #[serde(default)]
    pub agent: String,
    #[serde(default)]
    pub dataset: String,
    #[serde(default)]
    pub checkpoint: String,
}

impl Provenance {
    fn config(ctx: &Context) -> Provenance {
        Provenance { config: ctx.cfg.digest(), ..Provenance::default() }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub provenance: Provenance,
    #[serde(flatten)]
    pub body: T,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let bytes = std::fs::read(path).map_err(|e| {
        CliError::Data(planlens::Error::InvalidInput(format!("cannot read {}: {e} (run the earlier stage first?)", path.display())))
    })?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn ingest(ctx: &Context, pgn: &[PathBuf]) -> Result<(), CliError> {
    let paths = if pgn.is_empty() { ctx.cfg.dataset.pgn.clone() } else { pgn.to_vec() };
    if paths.is_empty() {
        return Err(CliError::Usage("no PGN files given (pass paths or set dataset.pgn)".into()));
    }
    ctx.ensure_out()?;
    let report = ingest_pgn(&paths, &ctx.cfg.dataset.filter)?;
    log::info!("ingested {} games, skipped {}", report.games.len(), report.skipped());
    write_json(&ctx.path(GAMES_FILE), &report)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RootsFile {
    pub roots: Vec<RootBoardRecord>,
}

pub fn roots(ctx: &Context) -> Result<(), CliError> {
    let games: IngestReport = read_json(&ctx.path(GAMES_FILE))?;
    let roots = extract_roots(&games.games, &ctx.cfg.dataset.roots)?;
    log::info!("selected {} roots from {} games", roots.len(), games.games.len());
    write_json(&ctx.path(ROOTS_FILE), &RootsFile { roots })
}

fn load_roots(ctx: &Context) -> Result<Vec<RootBoardRecord>, CliError> {
    Ok(read_json::<RootsFile>(&ctx.path(ROOTS_FILE))?.roots)
}

pub fn sample(ctx: &Context, limit: Option<usize>) -> Result<(), CliError> {
    let mut roots = load_roots(ctx)?;
    if let Some(n) = limit {
        roots.truncate(n);
    }
    let agent = ctx.agent()?;
    let pairs = roots
        .iter()
        .map(|r| sample_pairs(r.root_id, &r.history()?, &agent, &ctx.cfg.sampler))
        .collect::<planlens::Result<Vec<_>>>()?;
    log::info!("sampled trajectories for {} roots", pairs.len());
    let provenance = Provenance { agent: agent.digest().to_string(), ..Provenance::config(ctx) };
    write_json(&ctx.path(SAMPLES_FILE), &Stamped { provenance, body: serde_json::json!({ "pairs": pairs }) })
}

pub fn activations(ctx: &Context) -> Result<(), CliError> {
    let roots = load_roots(ctx)?;
    let agent = ctx.agent()?;
    let manifest = build_activation_dataset(&roots, &agent, &ctx.cfg.sampler, &ctx.cfg.dataset.build, &ctx.dataset_dir())?;
    log::info!(
        "wrote {} / {} / {} records (train / validation / test)",
        manifest.counts.get(Split::Train),
        manifest.counts.get(Split::Validation),
        manifest.counts.get(Split::Test)
    );
    Ok(())
}

fn train_data(set: &PairSet, contrastive: bool) -> Result<TrainData, CliError> {
    Ok(if contrastive { TrainData::from_pair_set(set)? } else { TrainData::states_from_pair_set(set) })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub checkpoint_sha256: String,
    pub resampled: usize,
    pub final_log: Option<planlens::csae::LogRow>,
    pub train_units: usize,
    pub validation_units: usize,
}

pub fn train(ctx: &Context) -> Result<(), CliError> {
    let dir = ctx.dataset_dir();
    let manifest = DatasetManifest::load(&dir)?;
    let c = &ctx.cfg.csae;
    let data = train_data(&PairSet::load(&dir, Split::Train)?, c.contrastive)?;
    if data.is_empty() {
        return Err(planlens::Error::EmptyTable.into());
    }
    let val_set = PairSet::load(&dir, Split::Validation)?;
    let validation = if val_set.is_empty() { None } else { Some(train_data(&val_set, c.contrastive)?) };
    let log_path = ctx.path("train_log.csv");
    if log_path.exists() {
        std::fs::remove_file(&log_path)?;
    }
    let mut log_err = None;
    let mut on_log = |row: &planlens::csae::LogRow| {
        if let Err(e) = TrainingLog::append_csv(&log_path, row) {
            log_err.get_or_insert(e);
        }
    };
    let outcome = train_with(&data, validation.as_ref(), c.n_f, c.n_c, &c.train, &c.weights, &mut on_log)?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    let ck = Checkpoint { params: outcome.params, probe: outcome.probe, weights: c.weights, dataset_digest: manifest.digest() };
    let path = ctx.path(CHECKPOINT_FILE);
    ck.save(&path)?;
    let sha = sha256_hex(&std::fs::read(&path)?);
    log::info!("saved {} ({})", path.display(), &sha[..12]);
    let provenance = Provenance { agent: manifest.agent_digest.clone(), dataset: manifest.digest(), checkpoint: sha.clone(), ..Provenance::config(ctx) };
    let body = TrainSummary {
        checkpoint_sha256: sha,
        resampled: outcome.resampled,
        final_log: outcome.log.last().cloned(),
        train_units: data.len(),
        validation_units: validation.as_ref().map_or(0, TrainData::len),
    };
    write_json(&ctx.path("train.json"), &Stamped { provenance, body })
}

/// A checkpoint with the split it is evaluated on.
pub struct Loaded {
    pub checkpoint: Checkpoint,
    pub checkpoint_sha: String,
    pub manifest: DatasetManifest,
    pub set: PairSet,
    pub split: Split,
}

impl Loaded {
    pub fn provenance(&self, ctx: &Context) -> Provenance {
        Provenance {
            agent: self.manifest.agent_digest.clone(),
            dataset: self.manifest.digest(),
            checkpoint: self.checkpoint_sha.clone(),
            ..Provenance::config(ctx)
        }
    }

    pub fn table(&self) -> Result<FeatureActivationTable, CliError> {
        Ok(FeatureActivationTable::from_pair_set(&self.checkpoint.params, &self.set, ACTIVATION_EPSILON)?)
    }
}

pub fn load_checkpoint(ctx: &Context, path: &Path, split: Option<&str>) -> Result<Loaded, CliError> {
    let split = Split::parse(split.unwrap_or(&ctx.cfg.analysis.split)).map_err(|e| CliError::Usage(e.to_string()))?;
    let dir = ctx.dataset_dir();
    let manifest = DatasetManifest::load(&dir)?;
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Data(planlens::Error::InvalidInput(format!("cannot read {}: {e}", path.display()))))?;
    let checkpoint = Checkpoint::from_bytes(&bytes, Some(2 * manifest.channels), path)?;
    checkpoint.matches_dataset(&manifest.digest());
    let set = PairSet::load(&dir, split)?;
    if set.is_empty() {
        return Err(CliError::Data(planlens::Error::InvalidInput(format!("split {} is empty", split.name()))));
    }
    Ok(Loaded { checkpoint, checkpoint_sha: sha256_hex(&bytes), manifest, set, split })
}

pub fn evaluate(ctx: &Context, checkpoint: Option<&Path>, split: Option<&str>) -> Result<(), CliError> {
    let loaded = load_checkpoint(ctx, &ctx.checkpoint_path(checkpoint), split)?;
    let table = loaded.table()?;
    let a = &ctx.cfg.analysis;
    let mut probes = vec![LinearProbe::from_csae(&loaded.checkpoint.probe)];
    for set in [FeatureSet::C, FeatureSet::F] {
        match fit_probe(&table, set, &a.probe) {
            Ok(p) => probes.push(p),
            Err(e) => log::warn!("no {} probe: {e}", set.name()),
        }
    }
    let labels = table.labels();
    if labels.iter().all(|&l| l) || !labels.iter().any(|&l| l) {
        log::warn!("split {} has a single optimality class; probe columns left empty", loaded.split.name());
        probes.clear();
    }
    let rows = ndarray::ArrayView2::from_shape((loaded.set.len(), loaded.set.dim()), &loaded.set.data).expect("pair set rows");
    let (l0, r2) = l0_r2(&loaded.checkpoint.params, rows)?;
    let report = metric_report(&table, &probes, l0, r2, &a.thresholds, a.entropy_mode)?;
    let histogram = frequency_histogram(&table.frequencies(), 30)?;
    let text = report.render_table();
    print!("{text}");
    let provenance = loaded.provenance(ctx);
    write_text(&ctx.path("report.txt"), &text)?;
    write_text(&ctx.path("histogram.csv"), &histogram.to_csv())?;
    #[derive(Serialize)]
    struct Body<'a> {
        split: &'a str,
        report: &'a MetricReport,
        probes: &'a [LinearProbe],
    }
    write_json(&ctx.path("report.json"), &Stamped { provenance, body: Body { split: loaded.split.name(), report: &report, probes: &probes } })
}

pub fn sweep(ctx: &Context, lambdas: Option<&[f64]>) -> Result<(), CliError> {
    let dir = ctx.dataset_dir();
    let manifest = DatasetManifest::load(&dir)?;
    let c = &ctx.cfg.csae;
    let lambdas = lambdas.unwrap_or(&c.sweep_lambdas);
    let train_set = PairSet::load(&dir, Split::Train)?;
    let data = train_data(&train_set, c.contrastive)?;
    let val = PairSet::load(&dir, Split::Validation)?;
    let validation = train_data(if val.is_empty() { &train_set } else { &val }, c.contrastive)?;
    let result = lambda_sweep(&data, &validation, lambdas, c.n_f, c.n_c, &c.train, &c.weights)?;
    let provenance = Provenance { agent: manifest.agent_digest.clone(), dataset: manifest.digest(), ..Provenance::config(ctx) };
    write_text(&ctx.path("sweep.csv"), &result.to_csv())?;
    #[derive(Serialize)]
    struct Body<'a> {
        sweep: &'a SweepResult,
        monotone_l0_2pct: bool,
    }
    let monotone = result.is_monotone(0.02, 0.0);
    write_json(&ctx.path("sweep.json"), &Stamped { provenance, body: Body { sweep: &result, monotone_l0_2pct: monotone } })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TournamentFile {
    pub result: TournamentResult,
    pub report: TournamentReport,
}

pub fn tournament(ctx: &Context, a: Option<&str>, b: Option<&str>, games: Option<usize>) -> Result<(), CliError> {
    let t = &ctx.cfg.tournament;
    let parse = |s: &str| Strategy::parse(s, &ctx.cfg.sampler).map_err(|e| CliError::Usage(e.to_string()));
    let sa = parse(a.unwrap_or(&t.a))?;
    let sb = parse(b.unwrap_or(&t.b))?;
    let mut run = t.run.clone();
    if let Some(n) = games {
        run.n_games = n;
    }
    if run.n_games == 0 || run.n_games % 2 != 0 {
        return Err(CliError::Usage(format!("--games must be positive and even, got {}", run.n_games)));
    }
    let agent = ctx.agent()?;
    let result = play_tournament(&sa, &sb, &agent, &default_openings(), &run)?;
    let report = TournamentReport { baseline: sb.name(), agents: vec!["agent".into()], rows: vec![ReportRow::new(sa.name(), vec![result.score])] };
    print!("{}", report.render_table());
    ctx.ensure_out()?;
    write_text(&ctx.path("tournament.txt"), &report.render_table())?;
    let provenance = Provenance { agent: agent.digest().to_string(), ..Provenance::config(ctx) };
    write_json(&ctx.path("tournament.json"), &Stamped { provenance, body: TournamentFile { result, report } })
}

/// Per-feature statistics served by the feature list endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub id: usize,
    pub set: FeatureSet,
    pub frequency: f64,
    pub mean_activation: f64,
    pub dead: bool,
    pub h_squares: Option<f64>,
    pub h_trajectories: Option<f64>,
    pub flags: Vec<UnwantedKind>,
    /// Label in the feature dendrogram cut; `None` for features left out of clustering.
    pub cluster: Option<usize>,
}

pub fn feature_summaries(
    table: &FeatureActivationTable,
    ctx: &Context,
    flags: &[UnwantedFlag],
    clustering: Option<&FeatureClustering>,
) -> Vec<FeatureSummary> {
    let a = &ctx.cfg.analysis;
    let hs = all_entropies(table, Partition::Squares, a.entropy_mode);
    let ht = all_entropies(table, Partition::Trajectories, a.entropy_mode);
    let freq = table.frequencies();
    let mean = table.mean_activations();
    let mut cluster = vec![None; table.n_features];
    if let Some(c) = clustering {
        for (&f, &l) in c.features.iter().zip(&c.labels) {
            cluster[f] = Some(l);
        }
    }
    (0..table.n_features)
        .map(|id| FeatureSummary {
            id,
            set: if id < table.n_c { FeatureSet::C } else { FeatureSet::D },
            frequency: freq[id],
            mean_activation: mean[id],
            dead: freq[id] < a.thresholds.dead,
            h_squares: hs[id],
            h_trajectories: ht[id],
            flags: flags.iter().filter(|f| f.feature == id).map(|f| f.kind).collect(),
            cluster: cluster[id],
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DendrogramFile {
    pub clustering: FeatureClustering,
    pub tree: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisMeta {
    pub split: String,
    pub samples: usize,
    pub n_features: usize,
    pub n_c: usize,
    pub layer: usize,
    pub k: usize,
}

pub fn analyze(ctx: &Context, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let loaded = load_checkpoint(ctx, &ctx.checkpoint_path(checkpoint), None)?;
    let table = loaded.table()?;
    let a = &ctx.cfg.analysis;
    let provenance = loaded.provenance(ctx);
    let dir = ctx.path(ANALYSIS_DIR);
    let flags = flag_unwanted_features(&table, &a.thresholds, &a.unwanted(), a.entropy_mode);

    let feature_cfg = ClusterConfig { n_clusters: a.feature_clusters, ..a.cluster.clone() };
    let features = cluster_features(&table, FeatureSet::F, &feature_cfg)?;
    let c_samples = cluster_samples(&table, FeatureSet::C, &a.cluster)?;
    let d_samples = cluster_samples(&table, FeatureSet::D, &a.cluster)?;
    let comparison = compare_clusterings(&c_samples.labels, &d_samples.labels)?;
    let entropies = |s: &SampleClustering| -> Result<ClusterReport, CliError> {
        let metas: Vec<_> = s.samples.iter().map(|&i| table.samples[i]).collect();
        Ok(cluster_entropies(&s.labels, &metas)?)
    };
    let mut labels = vec![None; table.n_features];
    for (&f, &l) in features.features.iter().zip(&features.labels) {
        labels[f] = Some(l);
    }
    let cosine = dictionary_cosine_stats(&loaded.checkpoint.params, Some(&labels), a.cosine_bins, a.max_pairs, a.cluster.seed)?;

    #[derive(Serialize)]
    struct Entropies {
        c: ClusterReport,
        d: ClusterReport,
    }
    #[derive(Serialize)]
    struct Comparison<'a> {
        c_vs_d: &'a ClusteringComparison,
    }
    let summaries = feature_summaries(&table, ctx, &flags, Some(&features));
    let meta = AnalysisMeta {
        split: loaded.split.name().into(),
        samples: table.len(),
        n_features: table.n_features,
        n_c: table.n_c,
        layer: loaded.manifest.layer,
        k: a.k,
    };
    let stamp = |body| Stamped { provenance: provenance.clone(), body };
    write_json(&dir.join("table.json"), &table)?;
    write_json(&dir.join("features.json"), &stamp(serde_json::json!({ "features": summaries })))?;
    write_text(&dir.join("dendrogram.csv"), &features.tree.to_csv())?;
    let tree = features.tree.to_json_tree();
    write_json(&dir.join("dendrogram.json"), &stamp(serde_json::to_value(DendrogramFile { clustering: features, tree })?))?;
    write_json(&dir.join("samples_c.json"), &c_samples)?;
    write_json(&dir.join("samples_d.json"), &d_samples)?;
    write_json(
        &dir.join("cluster_entropies.json"),
        &stamp(serde_json::to_value(Entropies { c: entropies(&c_samples)?, d: entropies(&d_samples)? })?),
    )?;
    write_json(&dir.join("cluster_comparison.json"), &stamp(serde_json::to_value(Comparison { c_vs_d: &comparison })?))?;
    write_text(&dir.join("cosine.csv"), &cosine.to_csv())?;
    write_json(&dir.join("cosine.json"), &stamp(serde_json::to_value(&cosine)?))?;
    write_json(&dir.join("analysis.json"), &stamp(serde_json::to_value(&meta)?))?;
    log::info!(
        "analyzed {} samples: {} flagged features, c/d clustering max-Pearson mean {:.3}",
        table.len(),
        flags.len(),
        comparison.mean
    );
    Ok(())
}

pub fn flag(ctx: &Context, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let loaded = load_checkpoint(ctx, &ctx.checkpoint_path(checkpoint), None)?;
    let table = loaded.table()?;
    let a = &ctx.cfg.analysis;
    let flags = flag_unwanted_features(&table, &a.thresholds, &a.unwanted(), a.entropy_mode);
    for f in &flags {
        println!("{}\t{:?}\t{:.4}", f.feature, f.kind, f.entropy);
    }
    write_json(
        &ctx.path("flags.json"),
        &Stamped { provenance: loaded.provenance(ctx), body: serde_json::json!({ "thresholds": a.unwanted(), "flags": flags }) },
    )
}

pub fn compare(ctx: &Context, models: &[PathBuf], k: Option<usize>) -> Result<(), CliError> {
    let paths: Vec<PathBuf> = if models.is_empty() { vec![ctx.path(CHECKPOINT_FILE)] } else { models.to_vec() };
    let k = k.unwrap_or(ctx.cfg.analysis.k);
    let loaded = paths.iter().map(|p| load_checkpoint(ctx, p, None)).collect::<Result<Vec<_>, _>>()?;
    let tables = loaded.iter().map(Loaded::table).collect::<Result<Vec<_>, _>>()?;
    let control = shuffled_samples(tables.last().expect("at least one model"), ctx.cfg.analysis.cluster.seed)?;
    let tag = |p: &Path| p.file_stem().map_or_else(|| "model".to_string(), |s| s.to_string_lossy().into_owned());
    let layer = loaded[0].manifest.layer;
    let mut list: Vec<SaeTable<'_>> =
        paths.iter().zip(&tables).map(|(p, t)| SaeTable { tag: tag(p), layer, table: t }).collect();
    list.push(SaeTable { tag: "shuffled-control".into(), layer, table: &control });
    let report: CrossSaeReport = cross_sae_overlap(&list, 0, k)?;
    for e in &report.entries {
        println!("{}\tlayer {}\tl0 {:.2}\tbest overlap {:.3} ± {:.3}\tfull {}", e.tag, e.layer, e.mean_l0, e.summary.mean, e.summary.std, e.full_overlap);
    }
    let provenance = loaded[0].provenance(ctx);
    write_json(&ctx.path("compare.json"), &Stamped { provenance, body: report })
}
