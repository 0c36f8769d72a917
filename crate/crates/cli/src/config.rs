//! The pipeline configuration file.
//!
//! TOML with one table per stage. Every key is optional; see `planlens.example.toml` at the
//! repository root for the full list with defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use planlens::agent::{Agent, AgentConfig};
use planlens::analysis::{ClusterConfig, UnwantedThresholds};
use planlens::csae::{LossWeights, TrainConfig};
use planlens::dataset::{DatasetConfig, PgnFilter, RootSelection};
use planlens::digest::json_digest;
use planlens::metrics::{EntropyMode, ProbeFit, Thresholds};
use planlens::sampler::{SamplingConfig, TournamentConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub channels: usize,
    pub blocks: usize,
    pub material_prior: bool,
    /// Seed of the stand-in network; ignored when `weights` is set.
    pub seed: u64,
    pub weights: Option<PathBuf>,
}

impl Default for AgentSection {
    fn default() -> Self {
        let c = AgentConfig::default();
        AgentSection { channels: c.channels, blocks: c.blocks, material_prior: c.material_prior, seed: 0, weights: None }
    }
}

impl AgentSection {
    pub fn config(&self) -> AgentConfig {
        AgentConfig { channels: self.channels, blocks: self.blocks, material_prior: self.material_prior }
    }

    pub fn build(&self) -> planlens::Result<Agent> {
        match &self.weights {
            Some(p) => Agent::load(p, &self.config()),
            None => Agent::seeded(&self.config(), self.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSection {
    pub pgn: Vec<PathBuf>,
    #[serde(flatten)]
    pub filter: PgnFilter,
    #[serde(flatten)]
    pub roots: RootSelection,
    #[serde(flatten)]
    pub build: DatasetConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsaeSection {
    pub n_f: usize,
    pub n_c: usize,
    /// Train on optimal/suboptimal pairs; `false` trains a plain SAE on single rows.
    pub contrastive: bool,
    pub sweep_lambdas: Vec<f64>,
    #[serde(flatten)]
    pub weights: LossWeights,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for CsaeSection {
    fn default() -> Self {
        CsaeSection {
            n_f: 256,
            n_c: 128,
            contrastive: true,
            sweep_lambdas: vec![1e-3, 3e-3, 1e-2, 3e-2],
            weights: LossWeights::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisSection {
    /// Split the analysis artifacts are computed on.
    pub split: String,
    pub k: usize,
    pub feature_clusters: usize,
    pub theta_squares: f64,
    pub theta_trajectories: f64,
    pub entropy_mode: EntropyMode,
    pub cosine_bins: usize,
    pub max_pairs: usize,
    pub probe: ProbeFit,
    #[serde(flatten)]
    pub thresholds: Thresholds,
    #[serde(flatten)]
    pub cluster: ClusterConfig,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let u = UnwantedThresholds::default();
        AnalysisSection {
            split: "test".into(),
            k: 16,
            feature_clusters: 20,
            theta_squares: u.squares,
            theta_trajectories: u.trajectories,
            entropy_mode: EntropyMode::default(),
            cosine_bins: 40,
            max_pairs: 1_000_000,
            probe: ProbeFit::default(),
            thresholds: Thresholds::default(),
            cluster: ClusterConfig::default(),
        }
    }
}

impl AnalysisSection {
    pub fn unwanted(&self) -> UnwantedThresholds {
        UnwantedThresholds { squares: self.theta_squares, trajectories: self.theta_trajectories }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub bind: String,
}

impl Default for ServeSection {
    fn default() -> Self {
        ServeSection { bind: "127.0.0.1:8080".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TournamentSection {
    pub a: String,
    pub b: String,
    #[serde(flatten)]
    pub run: TournamentConfig,
}

impl Default for TournamentSection {
    fn default() -> Self {
        TournamentSection { a: "raw_q".into(), b: "policy".into(), run: TournamentConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub agent: AgentSection,
    pub sampler: SamplingConfig,
    pub dataset: DatasetSection,
    pub csae: CsaeSection,
    pub analysis: AnalysisSection,
    pub serve: ServeSection,
    pub tournament: TournamentSection,
}

impl PipelineConfig {
    /// Parses a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<PipelineConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = PipelineConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.dataset.pgn.iter_mut().for_each(resolve);
        if let Some(w) = cfg.agent.weights.as_mut() {
            resolve(w);
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<PipelineConfig, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("bad config: {e}")))
    }

    /// Replaces every stage seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.agent.seed = seed;
        self.sampler.seed = seed;
        self.dataset.roots.seed = seed;
        self.csae.train.seed = seed;
        self.analysis.cluster.seed = seed;
        self.tournament.run.seed = seed;
    }

    pub fn digest(&self) -> String {
        json_digest(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let cfg = PipelineConfig::parse("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.analysis.cluster.n_clusters, 100);
        assert_eq!(cfg.analysis.k, 16);
    }

    #[test]
    fn flat_sections_round_trip() {
        let text = r#"
[agent]
channels = 8
blocks = 1

[sampler]
depth = 2
suboptimal_count = 2

[dataset]
pgn = ["games.pgn"]
min_ply = 4
per_game_cap = 2
layer = 1
squares_per_board = 8

[csae]
n_f = 32
n_c = 16
lambda_sparse = 0.01
steps = 50
batch_size = 64

[analysis]
n_clusters = 10
dead = 0.01
theta_squares = 0.25

[analysis.tsne]
iterations = 50

[tournament]
n_games = 4
"#;
        let cfg = PipelineConfig::parse(text).unwrap();
        assert_eq!(cfg.agent.channels, 8);
        assert_eq!(cfg.sampler.depth, 2);
        assert_eq!(cfg.dataset.roots.per_game_cap, Some(2));
        assert_eq!(cfg.dataset.build.squares_per_board, Some(8));
        assert_eq!(cfg.csae.train.steps, 50);
        assert_eq!(cfg.csae.weights.lambda_sparse, 0.01);
        assert_eq!(cfg.analysis.cluster.n_clusters, 10);
        assert_eq!(cfg.analysis.cluster.tsne.iterations, 50);
        assert_eq!(cfg.analysis.thresholds.dead, 0.01);
        assert_eq!(cfg.analysis.theta_squares, 0.25);
        assert_eq!(cfg.tournament.run.n_games, 4);
        let again = PipelineConfig::parse(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn example_file_lists_the_defaults() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../planlens.example.toml");
        assert_eq!(PipelineConfig::load(&path).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn unknown_sections_are_rejected() {
        assert!(matches!(PipelineConfig::parse("[nope]\nx = 1"), Err(CliError::Usage(_))));
    }

    #[test]
    fn seed_override_reaches_every_stage() {
        let mut cfg = PipelineConfig::default();
        cfg.set_seed(9);
        assert_eq!(cfg.sampler.seed, 9);
        assert_eq!(cfg.csae.train.seed, 9);
        assert_eq!(cfg.analysis.cluster.seed, 9);
        assert_ne!(cfg.digest(), PipelineConfig::default().digest());
    }
}
