//! Root-board selection from ingested games.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pgn::GameRecord;
use crate::chess::{BoardState, GameHistory};
use crate::digest::derive_seed;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootBoardRecord {
    /// Position in the selected root list; trajectory ids are derived from it.
    pub root_id: u64,
    pub game_id: String,
    pub ply: usize,
    pub fen: String,
    /// UCI moves from the start position up to the root, for history reconstruction.
    pub moves: Vec<String>,
}

impl RootBoardRecord {
    pub fn history(&self) -> Result<GameHistory> {
        GameHistory::from_uci(BoardState::start(), &self.moves)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RootSelection {
    pub min_ply: usize,
    /// Roots kept per game; `None` keeps every candidate.
    pub per_game_cap: Option<usize>,
    /// Stop once this many roots are selected in total.
    pub max_roots: Option<usize>,
    pub seed: u64,
}

impl Default for RootSelection {
    fn default() -> Self {
        RootSelection { min_ply: 20, per_game_cap: Some(4), max_roots: None, seed: 0 }
    }
}

/// Plies `p` in `[min_ply, len)` whose position is ongoing with at least two legal moves.
pub fn candidate_plies(game: &GameRecord, min_ply: usize) -> Result<Vec<usize>> {
    let mut history = GameHistory::new(BoardState::start());
    let mut out = Vec::new();
    for (ply, uci) in game.moves.iter().enumerate() {
        if ply >= min_ply && !history.status().is_over() && history.current().legal_moves().len() >= 2 {
            out.push(ply);
        }
        history.push(uci.parse()?)?;
    }
    Ok(out)
}

/// Uniformly samples up to `per_game_cap` candidate plies per game with a per-game RNG
/// stream, keeping plies in increasing order and games in input order.
pub fn extract_roots(games: &[GameRecord], sel: &RootSelection) -> Result<Vec<RootBoardRecord>> {
    let mut roots = Vec::new();
    for (gi, game) in games.iter().enumerate() {
        let cands = candidate_plies(game, sel.min_ply)?;
        let chosen: Vec<usize> = match sel.per_game_cap {
            Some(cap) if cap < cands.len() => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(sel.seed, gi as u64));
                let mut idx = rand::seq::index::sample(&mut rng, cands.len(), cap).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| cands[i]).collect()
            }
            _ => cands,
        };
        for ply in chosen {
            if sel.max_roots.is_some_and(|m| roots.len() >= m) {
                return Ok(roots);
            }
            let moves = game.moves[..ply].to_vec();
            let history = GameHistory::from_uci(BoardState::start(), &moves)?;
            roots.push(RootBoardRecord {
                root_id: roots.len() as u64,
                game_id: game.id.clone(),
                ply,
                fen: history.current().to_fen(),
                moves,
            });
        }
    }
    Ok(roots)
}
