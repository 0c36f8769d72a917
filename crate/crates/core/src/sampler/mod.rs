//! Move scoring with the practical upper-confidence bound and trajectory sampling.
//!
//! Every legal move `a` at `s` is scored as
//! `U = alpha * V(s+a) + beta * M(s+a) + gamma * P(s, a)`, where `V` is the child's
//! value seen from the mover, `M` the moves-left utility and `P` the masked policy.
//! Optimal rollouts follow argmax `U`; suboptimal ones diverge at the root by sampling
//! from a temperature softmax over `U` with the argmax removed, then continue optimally.

mod tournament;

pub use tournament::{
    default_openings, play_game, run_report, tournament, GameResult, ReportRow, Strategy, TournamentConfig,
    TournamentReport, TournamentResult,
};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{masked_policy, value_from_wdl, Agent, Heads, RewardVector};
use crate::chess::{BoardState, GameHistory, GameStatus, Move};
use crate::digest::{derive_seed, json_digest};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub alpha: f32,
    pub beta: f32,
    pub gamma: f32,
    pub v_threshold: f32,
    /// Clamp bound on the scaled moves-left difference, in plies.
    pub m_max: f32,
    pub m_slope: f32,
    /// `chi(x) = c0 + c1 x + c2 x^2`.
    pub chi: [f32; 3],
    pub temperature: f32,
    /// Maximum trajectory length T.
    pub depth: usize,
    /// Suboptimal trajectories per root, k.
    pub suboptimal_count: usize,
    pub seed: u64,
    pub reward: RewardVector,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            alpha: 1.0,
            beta: 0.5,
            gamma: 0.5,
            v_threshold: 0.8,
            m_max: 10.0,
            m_slope: 1.0,
            chi: [0.0, 1.0, 0.0],
            temperature: 1.0,
            depth: 3,
            suboptimal_count: 1,
            seed: 0,
            reward: RewardVector::default(),
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha, self.beta, self.gamma, self.m_slope, self.chi[0], self.chi[1], self.chi[2]]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("sampling weights must be finite".into()));
        }
        if !(0.0..1.0).contains(&self.v_threshold) {
            return Err(Error::InvalidInput(format!("v_threshold {} outside [0, 1)", self.v_threshold)));
        }
        if !(self.m_max > 0.0 && self.m_max.is_finite()) {
            return Err(Error::InvalidInput("m_max must be positive".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidInput("temperature must be positive".into()));
        }
        if self.depth == 0 {
            return Err(Error::InvalidInput("depth must be at least 1".into()));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        json_digest(self)
    }

    pub fn chi(&self, x: f32) -> f32 {
        self.chi[0] + self.chi[1] * x + self.chi[2] * x * x
    }
}

/// `ReLU((|v| - threshold) / (1 - threshold))`.
pub fn extra_value_ratio(v: f32, v_threshold: f32) -> f32 {
    ((v.abs() - v_threshold) / (1.0 - v_threshold)).max(0.0)
}

/// Moves-left utility: prefer shorter games when winning and longer ones when losing,
/// gated by how decisive the child value is.
pub fn ml_utility(v_child: f32, m_child: f32, m_parent: f32, cfg: &SamplingConfig) -> f32 {
    let sign = if v_child < 0.0 {
        1.0
    } else if v_child > 0.0 {
        -1.0
    } else {
        0.0
    };
    let diff = (cfg.m_slope * (m_child - m_parent)).clamp(-cfg.m_max, cfg.m_max);
    sign * diff * cfg.chi(extra_value_ratio(v_child, cfg.v_threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredMove {
    #[serde(rename = "move")]
    pub mv: Move,
    pub u: f32,
    /// Child value from the mover's side.
    pub value: f32,
    pub ml_utility: f32,
    pub prior: f32,
}

/// Exact outcome of a finished child, from the child's side to move.
fn terminal_child(status: GameStatus) -> Option<([f32; 3], f32)> {
    match status {
        GameStatus::Ongoing => None,
        GameStatus::Checkmate => Some(([0.0, 0.0, 1.0], 0.0)),
        _ => Some(([0.0, 1.0, 0.0], 0.0)),
    }
}

/// Scores every legal move of the current position, in legal-move order.
pub fn score_moves(game: &GameHistory, agent: &Agent, cfg: &SamplingConfig) -> Result<Vec<ScoredMove>> {
    if game.status().is_over() {
        return Err(Error::TerminalState);
    }
    let board = game.current();
    let legal = board.legal_moves();
    let parent = agent.evaluate(&game.stack(), Heads::All)?;
    let priors = masked_policy(&parent, &legal, board.side_to_move())?;
    legal
        .iter()
        .zip(priors)
        .map(|(&mv, prior)| {
            let child = game.child(mv)?;
            let (wdl, m_child) = match terminal_child(child.status()) {
                Some(t) => t,
                None => {
                    let out = agent.evaluate(&child.stack(), Heads::Value)?;
                    (out.wdl, out.moves_left)
                }
            };
            let value = value_from_wdl(wdl, cfg.reward, true);
            let ml = ml_utility(value, m_child, parent.moves_left, cfg);
            let u = cfg.alpha * value + cfg.beta * ml + cfg.gamma * prior;
            Ok(ScoredMove { mv, u, value, ml_utility: ml, prior })
        })
        .collect()
}

/// Index of the highest score; ties go to the earliest entry.
pub fn argmax(scores: &[ScoredMove]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s.u > scores[b].u) {
            best = Some(i);
        }
    }
    best
}

/// Draws an index from `softmax(u / temperature)` over every entry except `exclude`.
pub fn sample_excluding(u: &[f32], exclude: usize, temperature: f32, rng: &mut ChaCha8Rng) -> Result<usize> {
    if u.len() < 2 {
        return Err(Error::OnlyOneLegalMove);
    }
    let max = u
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != exclude)
        .map(|(_, &v)| v as f64)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = u
        .iter()
        .enumerate()
        .map(|(i, &v)| if i == exclude { 0.0 } else { ((v as f64 - max) / temperature as f64).exp() })
        .collect();
    let dist = WeightedIndex::new(&weights).map_err(|e| Error::InvalidInput(format!("sampling weights: {e}")))?;
    Ok(dist.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimality {
    Optimal,
    Suboptimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub root_id: u64,
    /// 0 for the optimal rollout, `j` for the j-th suboptimal one.
    pub index: u32,
    pub moves: Vec<Move>,
    /// `states[t]` is the position after `moves[t]`.
    pub states: Vec<BoardState>,
    pub flag: Optimality,
    pub divergence_ply: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.moves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moves.is_empty()
    }

    /// The game extended by this trajectory's moves.
    pub fn replay(&self, root: &GameHistory) -> Result<GameHistory> {
        let mut g = root.clone();
        for &m in &self.moves {
            g.push(m)?;
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPair {
    pub root_id: u64,
    pub root: BoardState,
    pub optimal: Trajectory,
    pub suboptimal: Vec<Trajectory>,
}

// Extends `game` optimally until `depth` moves are recorded or the game ends.
fn continue_optimal(
    game: &mut GameHistory,
    traj: &mut Trajectory,
    depth: usize,
    agent: &Agent,
    cfg: &SamplingConfig,
) -> Result<()> {
    while traj.moves.len() < depth && !game.status().is_over() {
        let scores = score_moves(game, agent, cfg)?;
        let best = scores[argmax(&scores).expect("ongoing position has a legal move")].mv;
        game.push(best)?;
        traj.moves.push(best);
        traj.states.push(*game.current());
    }
    Ok(())
}

fn start_trajectory(root_id: u64, index: u32, flag: Optimality, divergence_ply: Option<usize>) -> Trajectory {
    Trajectory { root_id, index, moves: Vec::new(), states: Vec::new(), flag, divergence_ply }
}

pub fn rollout_optimal(root_id: u64, root: &GameHistory, agent: &Agent, cfg: &SamplingConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if root.status().is_over() {
        return Err(Error::TerminalState);
    }
    let mut traj = start_trajectory(root_id, 0, Optimality::Optimal, None);
    let mut game = root.clone();
    continue_optimal(&mut game, &mut traj, cfg.depth, agent, cfg)?;
    Ok(traj)
}

fn suboptimal_from_scores(
    root_id: u64,
    index: u32,
    root: &GameHistory,
    root_scores: &[ScoredMove],
    agent: &Agent,
    cfg: &SamplingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let best = argmax(root_scores).ok_or(Error::EmptyLegalSet)?;
    let u: Vec<f32> = root_scores.iter().map(|s| s.u).collect();
    let pick = sample_excluding(&u, best, cfg.temperature, rng)?;
    let mut traj = start_trajectory(root_id, index, Optimality::Suboptimal, Some(0));
    let mut game = root.clone();
    let mv = root_scores[pick].mv;
    game.push(mv)?;
    traj.moves.push(mv);
    traj.states.push(*game.current());
    continue_optimal(&mut game, &mut traj, cfg.depth, agent, cfg)?;
    Ok(traj)
}

/// One suboptimal rollout diverging at the root.
pub fn rollout_suboptimal(
    root_id: u64,
    root: &GameHistory,
    agent: &Agent,
    cfg: &SamplingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    cfg.validate()?;
    let scores = score_moves(root, agent, cfg)?;
    if scores.len() < 2 {
        return Err(Error::OnlyOneLegalMove);
    }
    suboptimal_from_scores(root_id, 1, root, &scores, agent, cfg, rng)
}

/// The optimal rollout plus `k` suboptimal ones, all from `root`. Randomness comes from
/// a stream derived from `(cfg.seed, root_id)`, so results do not depend on scheduling.
pub fn sample_pairs(root_id: u64, root: &GameHistory, agent: &Agent, cfg: &SamplingConfig) -> Result<TrajectoryPair> {
    cfg.validate()?;
    let scores = score_moves(root, agent, cfg)?;
    if cfg.suboptimal_count > 0 && scores.len() < 2 {
        return Err(Error::OnlyOneLegalMove);
    }
    let mut optimal = start_trajectory(root_id, 0, Optimality::Optimal, None);
    let mut game = root.clone();
    let best = scores[argmax(&scores).expect("non-terminal root")].mv;
    game.push(best)?;
    optimal.moves.push(best);
    optimal.states.push(*game.current());
    continue_optimal(&mut game, &mut optimal, cfg.depth, agent, cfg)?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, root_id));
    let suboptimal = (1..=cfg.suboptimal_count as u32)
        .map(|j| suboptimal_from_scores(root_id, j, root, &scores, agent, cfg, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryPair { root_id, root: *root.current(), optimal, suboptimal })
}
