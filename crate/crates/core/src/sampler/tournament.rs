//! Head-to-head matches between move-selection strategies.

use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, score_moves, SamplingConfig};
use crate::agent::Agent;
use crate::chess::{BoardState, GameHistory, GameStatus};
use crate::digest::derive_seed;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    /// Argmax of the upper-confidence score.
    Guided(SamplingConfig),
    /// Uniformly random legal move.
    Random,
}

impl Strategy {
    /// Parses `raw_q`, `policy`, `random` or `u:ALPHA,BETA,GAMMA`, filling the remaining
    /// fields from `base`.
    pub fn parse(spec: &str, base: &SamplingConfig) -> Result<Strategy> {
        let guided = |alpha, beta, gamma| Strategy::Guided(SamplingConfig { alpha, beta, gamma, ..base.clone() });
        match spec {
            "raw_q" => Ok(guided(1.0, 0.0, 0.0)),
            "policy" => Ok(guided(0.0, 0.0, 1.0)),
            "random" => Ok(Strategy::Random),
            _ => {
                let bad = || Error::Parse(format!("bad strategy `{spec}`"));
                let weights = spec.strip_prefix("u:").ok_or_else(bad)?;
                let parts: Vec<f32> =
                    weights.split(',').map(|p| p.trim().parse::<f32>().map_err(|_| bad())).collect::<Result<_>>()?;
                match parts[..] {
                    [a, b, g] => Ok(guided(a, b, g)),
                    _ => Err(bad()),
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            Strategy::Random => "random".into(),
            Strategy::Guided(c) => match (c.alpha, c.beta, c.gamma) {
                (a, b, g) if a == 1.0 && b == 0.0 && g == 0.0 => "raw_q".into(),
                (a, b, g) if a == 0.0 && b == 0.0 && g == 1.0 => "policy".into(),
                (a, b, g) => format!("u:{a},{b},{g}"),
            },
        }
    }

    fn choose(&self, game: &GameHistory, agent: &Agent, rng: &mut ChaCha8Rng) -> Result<crate::chess::Move> {
        match self {
            Strategy::Random => {
                let legal = game.current().legal_moves();
                legal.choose(rng).copied().ok_or(Error::EmptyLegalSet)
            }
            Strategy::Guided(cfg) => {
                let scores = score_moves(game, agent, cfg)?;
                Ok(scores[argmax(&scores).ok_or(Error::EmptyLegalSet)?].mv)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TournamentConfig {
    pub n_games: usize,
    /// Games still running at this many plies are drawn.
    pub max_plies: usize,
    pub seed: u64,
}

impl Default for TournamentConfig {
    fn default() -> Self {
        TournamentConfig { n_games: 20, max_plies: 300, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GameResult {
    WhiteWins,
    BlackWins,
    Draw,
}

/// Plays one game from `opening`; plies already in the opening count towards the cap.
pub fn play_game(
    white: &Strategy,
    black: &Strategy,
    agent: &Agent,
    opening: &GameHistory,
    max_plies: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(GameResult, usize)> {
    let mut game = opening.clone();
    loop {
        match game.status() {
            GameStatus::Checkmate => {
                let loser = game.current().side_to_move();
                let r = match loser {
                    crate::chess::Color::White => GameResult::BlackWins,
                    crate::chess::Color::Black => GameResult::WhiteWins,
                };
                return Ok((r, game.ply()));
            }
            GameStatus::Ongoing => {}
            _ => return Ok((GameResult::Draw, game.ply())),
        }
        if game.ply() >= max_plies {
            return Ok((GameResult::Draw, game.ply()));
        }
        let strategy = match game.current().side_to_move() {
            crate::chess::Color::White => white,
            crate::chess::Color::Black => black,
        };
        let m = strategy.choose(&game, agent, rng)?;
        game.push(m)?;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TournamentResult {
    pub strategy_a: String,
    pub strategy_b: String,
    pub games: usize,
    pub wins_a: usize,
    pub wins_b: usize,
    pub draws: usize,
    /// `(wins_a - wins_b) / games`.
    pub score: f64,
}

/// Plays `n_games` between `a` and `b`. Game `i` uses opening `(i / 2) % len` with `a`
/// playing white on even `i`, so every opening is played once with each colour.
pub fn tournament(
    a: &Strategy,
    b: &Strategy,
    agent: &Agent,
    openings: &[GameHistory],
    cfg: &TournamentConfig,
) -> Result<TournamentResult> {
    if cfg.n_games == 0 || cfg.n_games % 2 != 0 {
        return Err(Error::InvalidInput(format!("n_games must be positive and even, got {}", cfg.n_games)));
    }
    if openings.is_empty() {
        return Err(Error::InvalidInput("no openings".into()));
    }
    let mut wins_a = 0;
    let mut wins_b = 0;
    for i in 0..cfg.n_games {
        let opening = &openings[(i / 2) % openings.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, i as u64));
        let a_white = i % 2 == 0;
        let (white, black) = if a_white { (a, b) } else { (b, a) };
        let (result, plies) = play_game(white, black, agent, opening, cfg.max_plies, &mut rng)?;
        log::debug!("game {i}: {result:?} after {plies} plies");
        match (result, a_white) {
            (GameResult::WhiteWins, true) | (GameResult::BlackWins, false) => wins_a += 1,
            (GameResult::WhiteWins, false) | (GameResult::BlackWins, true) => wins_b += 1,
            (GameResult::Draw, _) => {}
        }
    }
    Ok(TournamentResult {
        strategy_a: a.name(),
        strategy_b: b.name(),
        games: cfg.n_games,
        wins_a,
        wins_b,
        draws: cfg.n_games - wins_a - wins_b,
        score: (wins_a as f64 - wins_b as f64) / cfg.n_games as f64,
    })
}

/// Short, balanced opening lines in UCI.
pub fn default_openings() -> Vec<GameHistory> {
    const LINES: [&str; 8] = [
        "e2e4 e7e5 g1f3 b8c6",
        "d2d4 d7d5 c2c4 e7e6",
        "e2e4 c7c5 g1f3 d7d6",
        "d2d4 g8f6 c2c4 g7g6",
        "c2c4 e7e5 b1c3 g8f6",
        "e2e4 e7e6 d2d4 d7d5",
        "g1f3 d7d5 g2g3 g8f6",
        "e2e4 c7c6 d2d4 d7d5",
    ];
    LINES
        .iter()
        .map(|line| {
            let moves: Vec<String> = line.split_whitespace().map(String::from).collect();
            GameHistory::from_uci(BoardState::start(), &moves).expect("built-in opening is legal")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: String,
    /// One score per agent, against the baseline.
    pub scores: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation across agents.
    pub std: f64,
}

impl ReportRow {
    pub fn new(strategy: String, scores: Vec<f64>) -> ReportRow {
        let n = scores.len().max(1) as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let std = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
        ReportRow { strategy, scores, mean, std }
    }
}

/// Strategy rows by agent columns, each cell a score against the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TournamentReport {
    pub baseline: String,
    pub agents: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl TournamentReport {
    pub fn render_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.strategy.len()).max().unwrap_or(8).max(8);
        let mut out = format!("score vs {}\n", self.baseline);
        let _ = write!(out, "{:<width$}", "strategy");
        for a in &self.agents {
            let _ = write!(out, " | {a:>8}");
        }
        out.push_str(" | average\n");
        for r in &self.rows {
            let _ = write!(out, "{:<width$}", r.strategy);
            for s in &r.scores {
                let _ = write!(out, " | {s:>8.2}");
            }
            let _ = writeln!(out, " | {:.2} ± {:.2}", r.mean, r.std);
        }
        out
    }
}

/// Runs every strategy against `baseline` under each named agent.
pub fn run_report(
    strategies: &[Strategy],
    baseline: &Strategy,
    agents: &[(String, &Agent)],
    openings: &[GameHistory],
    cfg: &TournamentConfig,
) -> Result<TournamentReport> {
    let rows = strategies
        .iter()
        .map(|s| {
            let scores = agents
                .iter()
                .map(|(_, agent)| tournament(s, baseline, agent, openings, cfg).map(|r| r.score))
                .collect::<Result<Vec<_>>>()?;
            Ok(ReportRow::new(s.name(), scores))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TournamentReport { baseline: baseline.name(), agents: agents.iter().map(|(n, _)| n.clone()).collect(), rows })
}
