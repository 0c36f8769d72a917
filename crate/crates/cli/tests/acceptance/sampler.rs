use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use planlens::agent::{Agent, AgentConfig};
use planlens::chess::{BoardState, GameHistory};
use planlens::dataset::{extract_roots, ingest_pgn, PgnFilter, RootSelection};
use planlens::sampler::{
    argmax, default_openings, rollout_suboptimal, sample_excluding, sample_pairs, score_moves, tournament, SamplingConfig,
    Strategy, TournamentConfig, Trajectory,
};

use super::{ensure, fixture, Outcome};

fn fixture_roots() -> Result<Vec<GameHistory>, String> {
    let games = ingest_pgn(&[fixture("games.pgn")], &PgnFilter::default()).map_err(|e| e.to_string())?;
    let sel = RootSelection { min_ply: 0, per_game_cap: None, max_roots: None, seed: 0 };
    let roots = extract_roots(&games.games, &sel).map_err(|e| e.to_string())?;
    roots.iter().map(|r| r.history().map_err(|e| e.to_string())).collect()
}

fn check_trajectory(t: &Trajectory, root: &GameHistory, best: &str, depth: usize) -> Option<String> {
    let replay = match t.replay(root) {
        Ok(g) => g,
        Err(e) => return Some(format!("illegal replay: {e}")),
    };
    if t.is_empty() || t.len() > depth {
        return Some(format!("length {} outside 1..={depth}", t.len()));
    }
    if t.len() < depth && !replay.status().is_over() {
        return Some(format!("stopped at {} of {depth} plies in an ongoing game", t.len()));
    }
    if t.states.len() != t.len() || t.states.iter().zip(&replay.boards()[root.boards().len()..]).any(|(a, b)| a != b) {
        return Some("states disagree with the replayed moves".into());
    }
    let first = t.moves[0].to_uci();
    match t.index {
        0 if first != best => Some(format!("optimal rollout starts with {first}, argmax is {best}")),
        0 => None,
        _ if first == best => Some(format!("suboptimal rollout {} starts with the argmax {best}", t.index)),
        _ if t.divergence_ply != Some(0) => Some("suboptimal rollout does not diverge at the root".into()),
        _ => None,
    }
}

fn softmax_pair(a: f64, b: f64, temperature: f64) -> f64 {
    1.0 / (1.0 + ((b - a) / temperature).exp())
}

pub fn contracts() -> Outcome {
    let agent = Agent::seeded(&AgentConfig { channels: 8, blocks: 1, material_prior: true }, 3).map_err(|e| e.to_string())?;
    let cfg = SamplingConfig { depth: 3, suboptimal_count: 15, seed: 5, ..Default::default() };
    let roots = fixture_roots()?;
    let mut trajectories = 0;
    let mut violations = Vec::new();
    for (id, root) in roots.iter().enumerate() {
        let scores = score_moves(root, &agent, &cfg).map_err(|e| e.to_string())?;
        let best = scores[argmax(&scores).unwrap()].mv.to_uci();
        let pair = sample_pairs(id as u64, root, &agent, &cfg).map_err(|e| e.to_string())?;
        for t in std::iter::once(&pair.optimal).chain(&pair.suboptimal) {
            trajectories += 1;
            if let Some(v) = check_trajectory(t, root, &best, cfg.depth) {
                violations.push(format!("root {id}: {v}"));
            }
        }
        if trajectories >= 10_000 {
            break;
        }
    }
    ensure(trajectories >= 10_000, format!("only {trajectories} trajectories from {} roots", roots.len()))?;
    ensure(violations.is_empty(), format!("{} violations, first: {}", violations.len(), violations.first().cloned().unwrap_or_default()))?;

    // Two candidates remain once the argmax is excluded.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (u, temperature, n) = ([0.3f32, 1.0, 0.1], 0.5f32, 20_000);
    let hits = (0..n).filter(|_| sample_excluding(&u, 1, temperature, &mut rng).unwrap() == 0).count();
    let expected = softmax_pair(0.3, 0.1, 0.5);
    let synthetic_gap = (hits as f64 / n as f64 - expected).abs();
    ensure(synthetic_gap <= 0.05, format!("synthetic frequency off by {synthetic_gap:.4}"))?;

    let game = GameHistory::new(BoardState::from_fen("k7/8/8/7p/7P/8/8/K7 w - - 0 1").map_err(|e| e.to_string())?);
    let one = SamplingConfig { depth: 1, temperature: 0.05, ..cfg.clone() };
    let scores = score_moves(&game, &agent, &one).map_err(|e| e.to_string())?;
    ensure(scores.len() == 3, format!("fixture has {} legal moves", scores.len()))?;
    let best = argmax(&scores).unwrap();
    let rest: Vec<usize> = (0..3).filter(|&i| i != best).collect();
    let p0 = softmax_pair(scores[rest[0]].u as f64, scores[rest[1]].u as f64, one.temperature as f64);
    let draws = 4000;
    let first = (0..draws)
        .filter(|_| rollout_suboptimal(0, &game, &agent, &one, &mut rng).unwrap().moves[0] == scores[rest[0]].mv)
        .count();
    let board_gap = (first as f64 / draws as f64 - p0).abs();
    ensure(board_gap <= 0.05, format!("board frequency {:.4} vs softmax {p0:.4}", first as f64 / draws as f64))?;

    let mut flips = 0;
    let positions: Vec<&GameHistory> = roots.iter().step_by((roots.len() / 50).max(1)).take(50).collect();
    ensure(positions.len() == 50, format!("only {} invariance positions", positions.len()))?;
    for root in &positions {
        let base = score_moves(root, &agent, &cfg).map_err(|e| e.to_string())?;
        let best = argmax(&base);
        for k in [0.25f32, 2.0, 7.5] {
            let scaled = SamplingConfig { alpha: cfg.alpha * k, beta: cfg.beta * k, gamma: cfg.gamma * k, ..cfg.clone() };
            if argmax(&score_moves(root, &agent, &scaled).map_err(|e| e.to_string())?) != best {
                flips += 1;
            }
        }
    }
    ensure(flips == 0, format!("{flips} argmax changes under rescaling"))?;
    Ok(format!(
        "{trajectories} trajectories, 0 violations; frequency gaps {synthetic_gap:.4} (synthetic) and {board_gap:.4} (p={p0:.3} on the board); argmax stable on {} positions x 3 scales",
        positions.len()
    ))
}

pub fn tournament_sanity() -> Outcome {
    let agent = Agent::seeded(&AgentConfig::default(), 0).map_err(|e| e.to_string())?;
    let base = SamplingConfig::default();
    let openings = default_openings();
    let parse = |s: &str| Strategy::parse(s, &base).map_err(|e| e.to_string());
    let mirror = TournamentConfig { n_games: 16, max_plies: 120, seed: 1 };
    for spec in ["raw_q", "u:1,1,1"] {
        let s = parse(spec)?;
        let r = tournament(&s, &s, &agent, &openings, &mirror).map_err(|e| e.to_string())?;
        ensure(r.score == 0.0 && r.wins_a == r.wins_b, format!("{spec} self-play scored {}", r.score))?;
    }
    let run = TournamentConfig { n_games: 50, max_plies: 300, seed: 2 };
    let mut parts = Vec::new();
    for spec in ["raw_q", "u:1,1,1"] {
        let r = tournament(&parse(spec)?, &Strategy::Random, &agent, &openings, &run).map_err(|e| e.to_string())?;
        let line = format!("{spec} vs random {:+.2} ({}-{}-{})", r.score, r.wins_a, r.draws, r.wins_b);
        ensure(r.score > 0.0, line.clone())?;
        parts.push(line);
    }
    Ok(format!("mirrored self-play scores 0; {}", parts.join(", ")))
}
