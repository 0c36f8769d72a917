//! From PGN games to paired activation files.
//!
//! A dataset directory holds one `CSAP` file per split, `trajectories.json` with the
//! boards behind every record, and `manifest.json`, which is written last: a directory
//! without a manifest is incomplete and is refused by the readers.

mod pairfile;
mod pgn;
mod roots;

pub use pairfile::{
    record_len, traj_id, traj_index, ActivationPairRecord, PairReader, PairWriter, RecordMeta, PAIR_MAGIC, PAIR_VERSION,
};
pub use pgn::{ingest_pgn, parse_pgn, GameRecord, IngestReport, PgnFilter};
pub use roots::{candidate_plies, extract_roots, RootBoardRecord, RootSelection};

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{Agent, Heads, HiddenState};
use crate::chess::{encode_planes, BoardState, GameHistory};
use crate::digest::{derive_seed, json_digest, sha256_hex};
use crate::error::{Error, Result};
use crate::sampler::{sample_pairs, Optimality, SamplingConfig, Trajectory};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAJECTORIES_FILE: &str = "trajectories.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.csap", self.name())
    }

    pub fn parse(s: &str) -> Result<Split> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown split `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Hash of the root id.
    ByRoot,
    /// Hash of the game id, so every root of a game lands in one split.
    ByGame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Tapped trunk layer, 0..=N.
    pub layer: usize,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub split_mode: SplitMode,
    /// Emit only this many squares per board (same squares for every trajectory of a
    /// root); `None` emits all 64.
    pub squares_per_board: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            layer: 2,
            train_fraction: 0.9,
            validation_fraction: 0.05,
            split_mode: SplitMode::ByRoot,
            squares_per_board: None,
        }
    }
}

impl DatasetConfig {
    pub fn split_for(&self, root: &RootBoardRecord) -> Split {
        let digest = match self.split_mode {
            SplitMode::ByRoot => Sha256::digest(root.root_id.to_le_bytes()),
            SplitMode::ByGame => Sha256::digest(root.game_id.as_bytes()),
        };
        let x = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) as f64 / 2f64.powi(64);
        if x < self.train_fraction {
            Split::Train
        } else if x < self.train_fraction + self.validation_fraction {
            Split::Validation
        } else {
            Split::Test
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: u64,
    pub validation: u64,
    pub test: u64,
}

impl SplitCounts {
    pub fn get(&self, s: Split) -> u64 {
        match s {
            Split::Train => self.train,
            Split::Validation => self.validation,
            Split::Test => self.test,
        }
    }

    fn bump(&mut self, s: Split, by: u64) {
        match s {
            Split::Train => self.train += by,
            Split::Validation => self.validation += by,
            Split::Test => self.test += by,
        }
    }

    pub fn total(&self) -> u64 {
        self.train + self.validation + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub channels: usize,
    pub depth: usize,
    pub layer: usize,
    pub suboptimal_count: usize,
    /// Records per split.
    pub counts: SplitCounts,
    /// Roots per split.
    pub roots: SplitCounts,
    pub sampler_digest: String,
    pub agent_digest: String,
    pub roots_digest: String,
    pub config: DatasetConfig,
    /// SHA-256 of every data file, by file name.
    pub files: BTreeMap<String, String>,
}

impl DatasetManifest {
    pub fn load(dir: &Path) -> Result<DatasetManifest> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::MissingManifest(dir.to_path_buf()));
        }
        let m: DatasetManifest = serde_json::from_slice(&std::fs::read(&path)?)?;
        if m.format_version != PAIR_VERSION {
            return Err(Error::VersionMismatch { found: m.format_version, expected: PAIR_VERSION });
        }
        Ok(m)
    }

    /// Digest of the manifest itself, which pins every file it lists.
    pub fn digest(&self) -> String {
        json_digest(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub traj_id: u64,
    pub index: u32,
    pub flag: Optimality,
    pub moves: Vec<String>,
    /// FEN after each move; `fens[t - 1]` is the board at depth `t`.
    pub fens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootEntry {
    pub root_id: u64,
    pub game_id: String,
    pub ply: usize,
    pub fen: String,
    /// UCI moves from the start position to the root.
    pub history: Vec<String>,
    pub split: Split,
    pub trajectories: Vec<TrajectoryEntry>,
}

/// Board lookup for every record of a dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStore {
    pub roots: Vec<RootEntry>,
}

impl TrajectoryStore {
    pub fn load(dir: &Path) -> Result<TrajectoryStore> {
        Ok(serde_json::from_slice(&std::fs::read(dir.join(TRAJECTORIES_FILE))?)?)
    }

    fn index(&self) -> HashMap<u64, usize> {
        self.roots.iter().enumerate().map(|(i, r)| (r.root_id, i)).collect()
    }

    /// Root FEN and the FEN at the record's depth.
    pub fn boards(&self, meta: &RecordMeta) -> Option<(String, String)> {
        let root = self.roots.iter().find(|r| r.root_id == meta.root_id)?;
        let traj = root.trajectories.iter().find(|t| t.traj_id == meta.traj_id)?;
        let fen = traj.fens.get(meta.depth as usize - 1)?;
        Some((root.fen.clone(), fen.clone()))
    }

    /// Game histories of the root and of the record's board, as fed to the agent.
    pub fn histories(&self, meta: &RecordMeta) -> Result<(GameHistory, GameHistory)> {
        let missing = || Error::InvalidInput(format!("record {}/{} not in trajectory store", meta.root_id, meta.traj_id));
        let root = self.roots.iter().find(|r| r.root_id == meta.root_id).ok_or_else(missing)?;
        let traj = root.trajectories.iter().find(|t| t.traj_id == meta.traj_id).ok_or_else(missing)?;
        let root_history = GameHistory::from_uci(BoardState::start(), &root.history)?;
        let depth = (meta.depth as usize).min(traj.moves.len());
        let mut board = root_history.clone();
        for m in &traj.moves[..depth] {
            board.push(m.parse()?)?;
        }
        Ok((root_history, board))
    }

    /// Like [`TrajectoryStore::boards`] for many records, with a prebuilt index.
    pub fn boards_many(&self, metas: &[RecordMeta]) -> Vec<Option<(String, String)>> {
        let index = self.index();
        metas
            .iter()
            .map(|m| {
                let root = &self.roots[*index.get(&m.root_id)?];
                let traj = root.trajectories.iter().find(|t| t.traj_id == m.traj_id)?;
                Some((root.fen.clone(), traj.fens.get((m.depth as usize).checked_sub(1)?)?.clone()))
            })
            .collect()
    }
}

struct RootBlock {
    split: Split,
    root_hidden: HiddenState,
    trajectories: Vec<(Trajectory, Vec<HiddenState>)>,
    squares: Vec<u8>,
    entry: RootEntry,
}

pub(crate) fn tapped(agent: &Agent, history: &crate::chess::GameHistory, layer: usize) -> Result<HiddenState> {
    let planes = encode_planes(&history.stack());
    let (_, mut hidden) = agent.forward_with(planes.as_slice(), &[layer], Heads::Value)?;
    Ok(hidden.remove(0))
}

fn process_root(
    root: &RootBoardRecord,
    agent: &Agent,
    sampler: &SamplingConfig,
    cfg: &DatasetConfig,
) -> Result<RootBlock> {
    let history = root.history()?;
    let pair = sample_pairs(root.root_id, &history, agent, sampler)?;
    let root_hidden = tapped(agent, &history, cfg.layer)?;
    let mut trajectories = Vec::new();
    let mut entries = Vec::new();
    for traj in std::iter::once(pair.optimal).chain(pair.suboptimal) {
        let mut g = history.clone();
        let mut hs = Vec::with_capacity(traj.len());
        for &m in &traj.moves {
            g.push(m)?;
            hs.push(tapped(agent, &g, cfg.layer)?);
        }
        entries.push(TrajectoryEntry {
            traj_id: traj_id(root.root_id, traj.index),
            index: traj.index,
            flag: traj.flag,
            moves: traj.moves.iter().map(|m| m.to_uci()).collect(),
            fens: traj.states.iter().map(|b| b.to_fen()).collect(),
        });
        trajectories.push((traj, hs));
    }
    let squares: Vec<u8> = match cfg.squares_per_board {
        Some(n) if n < 64 => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(sampler.seed ^ 0x5157, root.root_id));
            let mut s: Vec<u8> = rand::seq::index::sample(&mut rng, 64, n).into_iter().map(|i| i as u8).collect();
            s.sort_unstable();
            s
        }
        _ => (0..64).collect(),
    };
    let split = cfg.split_for(root);
    let entry = RootEntry {
        root_id: root.root_id,
        game_id: root.game_id.clone(),
        ply: root.ply,
        fen: root.fen.clone(),
        history: root.moves.clone(),
        split,
        trajectories: entries,
    };
    Ok(RootBlock { split, root_hidden, trajectories, squares, entry })
}

fn process_chunk(
    chunk: &[RootBoardRecord],
    agent: &Agent,
    sampler: &SamplingConfig,
    cfg: &DatasetConfig,
) -> Result<Vec<RootBlock>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        chunk.par_iter().map(|r| process_root(r, agent, sampler, cfg)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        chunk.iter().map(|r| process_root(r, agent, sampler, cfg)).collect()
    }
}

fn file_sha(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Samples trajectories for every root and writes the split files, the trajectory store
/// and finally the manifest. Output bytes depend only on the inputs, not on threading.
pub fn build_activation_dataset(
    roots: &[RootBoardRecord],
    agent: &Agent,
    sampler: &SamplingConfig,
    cfg: &DatasetConfig,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    sampler.validate()?;
    if cfg.layer > agent.blocks() {
        return Err(Error::InvalidInput(format!("layer {} outside 0..={}", cfg.layer, agent.blocks())));
    }
    if sampler.suboptimal_count > 255 {
        return Err(Error::InvalidInput("at most 255 suboptimal trajectories per root".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        std::fs::remove_file(&manifest_path)?;
    }

    let c = agent.channels();
    let mut writers = BTreeMap::new();
    for s in Split::ALL {
        writers.insert(s, PairWriter::create(&out_dir.join(s.file_name()), c, sampler.depth)?);
    }
    let mut store = TrajectoryStore::default();
    let mut root_counts = SplitCounts::default();
    let mut h_root = vec![0.0; c];
    let mut h_traj = vec![0.0; c];

    for chunk in roots.chunks(32) {
        for block in process_chunk(chunk, agent, sampler, cfg)? {
            let w = writers.get_mut(&block.split).expect("writer per split");
            for (traj, hs) in &block.trajectories {
                for (t, h) in hs.iter().enumerate() {
                    for &sq in &block.squares {
                        let q = sq as usize;
                        for ch in 0..c {
                            h_root[ch] = block.root_hidden.get(ch, q);
                            h_traj[ch] = h.get(ch, q);
                        }
                        let meta = RecordMeta {
                            root_id: traj.root_id,
                            traj_id: traj_id(traj.root_id, traj.index),
                            depth: (t + 1) as u8,
                            square: sq,
                            flag: traj.flag,
                        };
                        w.write(&meta, &h_root, &h_traj)?;
                    }
                }
            }
            root_counts.bump(block.split, 1);
            store.roots.push(block.entry);
        }
        log::info!("processed {} / {} roots", store.roots.len(), roots.len());
    }

    let mut counts = SplitCounts::default();
    let mut files = BTreeMap::new();
    for (s, w) in writers {
        counts.bump(s, w.finish()?);
        files.insert(s.file_name(), file_sha(&out_dir.join(s.file_name()))?);
    }
    std::fs::write(out_dir.join(TRAJECTORIES_FILE), serde_json::to_vec(&store)?)?;
    files.insert(TRAJECTORIES_FILE.into(), file_sha(&out_dir.join(TRAJECTORIES_FILE))?);

    let manifest = DatasetManifest {
        format_version: PAIR_VERSION,
        channels: c,
        depth: sampler.depth,
        layer: cfg.layer,
        suboptimal_count: sampler.suboptimal_count,
        counts,
        roots: root_counts,
        sampler_digest: sampler.digest(),
        agent_digest: agent.digest().to_string(),
        roots_digest: json_digest(&roots),
        config: cfg.clone(),
        files,
    };
    let tmp = out_dir.join("manifest.json.tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(&manifest)?)?;
    std::fs::rename(&tmp, &manifest_path)?;
    Ok(manifest)
}

/// Streams the records of one split; refuses directories without a manifest.
pub fn read_pairs(dir: &Path, split: Split) -> Result<PairReader> {
    let manifest = DatasetManifest::load(dir)?;
    let reader = PairReader::open(&dir.join(split.file_name()))?;
    if reader.remaining() != manifest.counts.get(split) {
        return Err(Error::ChecksumMismatch(dir.join(split.file_name())));
    }
    Ok(reader)
}

/// One split held in memory as concatenated `[h_root; h_traj]` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    /// C, so rows have length 2C.
    pub channels: usize,
    pub meta: Vec<RecordMeta>,
    pub data: Vec<f32>,
}

impl PairSet {
    pub fn new(channels: usize) -> PairSet {
        PairSet { channels, meta: Vec::new(), data: Vec::new() }
    }

    pub fn load(dir: &Path, split: Split) -> Result<PairSet> {
        let reader = read_pairs(dir, split)?;
        let mut set = PairSet::new(reader.channels());
        for r in reader {
            let r = r?;
            set.push(r.meta, &r.h_root, &r.h_traj);
        }
        Ok(set)
    }

    pub fn push(&mut self, meta: RecordMeta, h_root: &[f32], h_traj: &[f32]) {
        assert_eq!(h_root.len(), self.channels);
        assert_eq!(h_traj.len(), self.channels);
        self.meta.push(meta);
        self.data.extend_from_slice(h_root);
        self.data.extend_from_slice(h_traj);
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn dim(&self) -> usize {
        2 * self.channels
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim()..(i + 1) * self.dim()]
    }

    /// Aligned (optimal, suboptimal) row pairs sharing root, depth and square. With more
    /// than one suboptimal trajectory per root, `epoch` cycles through them.
    pub fn contrastive_pairs(&self, epoch: usize) -> Vec<(usize, usize)> {
        let mut groups: BTreeMap<(u64, u8, u8), (Option<usize>, Vec<(u32, usize)>)> = BTreeMap::new();
        for (i, m) in self.meta.iter().enumerate() {
            let g = groups.entry((m.root_id, m.depth, m.square)).or_default();
            match m.flag {
                Optimality::Optimal => g.0 = Some(i),
                Optimality::Suboptimal => g.1.push((traj_index(m.traj_id), i)),
            }
        }
        groups
            .into_values()
            .filter_map(|(pos, mut negs)| {
                let pos = pos?;
                if negs.is_empty() {
                    return None;
                }
                negs.sort_unstable();
                Some((pos, negs[epoch % negs.len()].1))
            })
            .collect()
    }

    pub fn path_for(dir: &Path, split: Split) -> PathBuf {
        dir.join(split.file_name())
    }
}
