//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes plain strings and numbers and returns JSON text. The `*_json`
//! functions hold the logic and run natively too.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use planlens::agent::{Agent, AgentConfig};
use planlens::chess::{encode_planes, BoardState, GameHistory, PLANE_COUNT};
use planlens::sampler::{argmax, ml_utility, score_moves, SamplingConfig};

/// Seed of the stand-in network used by the page.
pub const DEMO_SEED: u64 = 0;

fn game(fen: &str, moves: &str) -> Result<GameHistory, String> {
    let start = if fen.trim().is_empty() { BoardState::start() } else { BoardState::from_fen(fen.trim()).map_err(|e| e.to_string())? };
    let moves: Vec<String> = moves.split_whitespace().map(String::from).collect();
    GameHistory::from_uci(start, &moves).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Planes {
    fen: String,
    black_to_move: bool,
    planes: Vec<Vec<f32>>,
}

/// The 112 input planes of the position after `moves`, each as 64 cells (rank 1 first,
/// in the mover's frame).
pub fn planes_json(fen: &str, moves: &str) -> Result<String, String> {
    let g = game(fen, moves)?;
    let stack = encode_planes(&g.stack());
    let planes = (0..PLANE_COUNT).map(|p| stack.plane(p).to_vec()).collect();
    let body = Planes { fen: g.current().to_fen(), black_to_move: g.current().side_to_move() == planlens::chess::Color::Black, planes };
    serde_json::to_string(&body).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct ScoreRow {
    uci: String,
    san: String,
    u: f32,
    value: f32,
    ml_utility: f32,
    prior: f32,
    best: bool,
}

/// Scores every legal move with `U = alpha Q + beta M + gamma P` under a seeded stand-in agent.
pub fn score_json(fen: &str, moves: &str, alpha: f32, beta: f32, gamma: f32, channels: usize) -> Result<String, String> {
    let g = game(fen, moves)?;
    let agent = Agent::seeded(&AgentConfig { channels, blocks: 1, material_prior: true }, DEMO_SEED).map_err(|e| e.to_string())?;
    let cfg = SamplingConfig { alpha, beta, gamma, ..SamplingConfig::default() };
    cfg.validate().map_err(|e| e.to_string())?;
    let scores = score_moves(&g, &agent, &cfg).map_err(|e| e.to_string())?;
    let best = argmax(&scores);
    let board = g.current();
    let mut rows: Vec<ScoreRow> = scores
        .iter()
        .enumerate()
        .map(|(i, s)| ScoreRow {
            uci: s.mv.to_uci(),
            san: board.to_san(s.mv),
            u: s.u,
            value: s.value,
            ml_utility: s.ml_utility,
            prior: s.prior,
            best: Some(i) == best,
        })
        .collect();
    rows.sort_by(|a, b| b.u.total_cmp(&a.u));
    serde_json::to_string(&rows).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Curve {
    v: Vec<f32>,
    m: Vec<f32>,
}

/// `M(v)` sampled at `points` child values in `[-1, 1]` for a fixed moves-left difference.
pub fn ml_curve_json(m_diff: f32, v_threshold: f32, m_max: f32, m_slope: f32, points: usize) -> Result<String, String> {
    let cfg = SamplingConfig { v_threshold, m_max, m_slope, ..SamplingConfig::default() };
    cfg.validate().map_err(|e| e.to_string())?;
    if points < 2 {
        return Err("need at least 2 points".into());
    }
    let v: Vec<f32> = (0..points).map(|i| -1.0 + 2.0 * i as f32 / (points - 1) as f32).collect();
    let m = v.iter().map(|&x| ml_utility(x, m_diff, 0.0, &cfg)).collect();
    serde_json::to_string(&Curve { v, m }).map_err(|e| e.to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn planes(fen: &str, moves: &str) -> Result<String, JsError> {
    js(planes_json(fen, moves))
}

#[wasm_bindgen]
pub fn score(fen: &str, moves: &str, alpha: f32, beta: f32, gamma: f32, channels: usize) -> Result<String, JsError> {
    js(score_json(fen, moves, alpha, beta, gamma, channels))
}

#[wasm_bindgen]
pub fn ml_curve(m_diff: f32, v_threshold: f32, m_max: f32, m_slope: f32, points: usize) -> Result<String, JsError> {
    js(ml_curve_json(m_diff, v_threshold, m_max, m_slope, points))
}
