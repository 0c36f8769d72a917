use std::collections::BTreeSet;

use planlens::chess::{encode_planes, perft, policy_index_to_move, BoardState, Color, GameHistory, Move, PolicyIndexTable, POLICY_SIZE};
use shakmaty::{fen::Fen, CastlingMode, Chess, Position};

use super::{ensure, Outcome};

fn uci(m: Move) -> String {
    m.to_uci()
}

fn square_name(i: usize) -> String {
    format!("{}{}", (b'a' + (i % 8) as u8) as char, i / 8 + 1)
}

/// Queen lines, knight jumps and the q/r/b promotions, enumerated from coordinates alone.
fn brute_force_patterns() -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for from in 0..64usize {
        for to in 0..64usize {
            if from == to {
                continue;
            }
            let df = (from % 8).abs_diff(to % 8);
            let dr = (from / 8).abs_diff(to / 8);
            let queen = df == 0 || dr == 0 || df == dr;
            let knight = (df, dr) == (1, 2) || (df, dr) == (2, 1);
            if queen || knight {
                out.insert(format!("{}{}", square_name(from), square_name(to)));
            }
        }
    }
    for ff in 0..8usize {
        for tf in ff.saturating_sub(1)..=(ff + 1).min(7) {
            for p in ['q', 'r', 'b'] {
                out.insert(format!("{}{}{p}", square_name(48 + ff), square_name(56 + tf)));
            }
        }
    }
    out
}

fn mirror_uci(s: &str) -> String {
    let b = s.as_bytes();
    let flip = |r: u8| (b'1' + b'8' - r) as char;
    let mut out = format!("{}{}{}{}", b[0] as char, flip(b[1]), b[2] as char, flip(b[3]));
    if b.len() == 5 {
        out.push(b[4] as char);
    }
    out
}

pub fn policy_index() -> Outcome {
    let brute = brute_force_patterns();
    ensure(brute.len() == POLICY_SIZE, format!("brute force found {} patterns", brute.len()))?;
    let table = PolicyIndexTable::get();
    ensure(table.len() == POLICY_SIZE, format!("table has {} entries", table.len()))?;
    let mut seen = BTreeSet::new();
    for i in 0..POLICY_SIZE {
        let m = table.pattern(i).ok_or(format!("no pattern at {i}"))?;
        let s = uci(m);
        ensure(brute.contains(&s), format!("entry {i} = {s} is not a pattern"))?;
        ensure(seen.insert(s.clone()), format!("entry {i} = {s} repeats"))?;
        ensure(table.index_of(m) == Some(i), format!("index_of({s}) != {i}"))?;
        let black = policy_index_to_move(i, Color::Black).map_err(|e| e.to_string())?;
        ensure(uci(black) == mirror_uci(&s), format!("black entry {i}: {} vs {}", uci(black), mirror_uci(&s)))?;
    }
    ensure(seen == brute, "table and enumeration differ")?;
    Ok(format!("{} entries, bijective with the enumeration for both colours", seen.len()))
}

const PERFT_SUITE: [&str; 20] = [
    "rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1",
    "r3k2r/p1ppqpb1/bn2pnp1/3PN3/1p2P3/2N2Q1p/PPPBBPPP/R3K2R w KQkq - 0 1",
    "8/2p5/3p4/KP5r/1R3p1k/8/4P1P1/8 w - - 0 1",
    "r3k2r/Pppp1ppp/1b3nbN/nP6/BBP1P3/q4N2/Pp1P2PP/R2Q1RK1 w kq - 0 1",
    "r2q1rk1/pP1p2pp/Q4n2/bbp1p3/Np6/1B3NBn/pPPP1PPP/R3K2R b KQ - 0 1",
    "rnbq1k1r/pp1Pbppp/2p5/8/2B5/8/PPP1NnPP/RNBQK2R w KQ - 1 8",
    "r4rk1/1pp1qppp/p1np1n2/2b1p1B1/2B1P1b1/P1NP1N2/1PP1QPPP/R4RK1 w - - 0 10",
    "8/8/8/8/k2Pp2Q/8/8/3K4 b - d3 0 1",
    "8/8/1k6/2b5/2pP4/8/5K2/8 b - d3 0 1",
    "3k4/3p4/8/K1P4r/8/8/8/8 b - - 0 1",
    "8/8/4k3/8/2p5/8/B2P2K1/8 w - - 0 1",
    "r3k2r/1b4bq/8/8/8/8/7B/R3K2R w KQkq - 0 1",
    "r3k2r/8/3Q4/8/8/5q2/8/R3K2R b KQkq - 0 1",
    "2K2r2/4P3/8/8/8/8/8/3k4 w - - 0 1",
    "8/8/1P2K3/8/2n5/1q6/8/5k2 b - - 0 1",
    "4k3/1P6/8/8/8/8/K7/8 w - - 0 1",
    "8/P1k5/K7/8/8/8/8/8 w - - 0 1",
    "K1k5/8/P7/8/8/8/8/8 w - - 0 1",
    "8/8/2k5/5q2/5n2/8/5K2/8 b - - 0 1",
    "n1n5/PPPk4/8/8/8/8/4Kppp/5N1N b - - 0 1",
];

fn oracle(fen: &str) -> Result<Chess, String> {
    let f: Fen = fen.parse().map_err(|e| format!("{fen}: {e}"))?;
    f.into_position(CastlingMode::Standard).map_err(|e| format!("{fen}: {e}"))
}

/// Encodes from FEN text alone: `fens` is the whole game so far, oldest first.
fn naive_planes(fens: &[String]) -> Vec<f32> {
    let mut out = vec![0.0f32; 112 * 64];
    let current: Vec<&str> = fens.last().expect("non-empty game").split(' ').collect();
    let black = current[1] == "b";
    let key = |f: &str| f.split(' ').take(4).collect::<Vec<_>>().join(" ");
    let n = fens.len();
    for slot in 0..n.min(8) {
        let idx = n - 1 - slot;
        let fen = &fens[idx];
        for (row, rank_text) in fen.split(' ').next().unwrap().split('/').enumerate() {
            let rank = 7 - row;
            let mut file = 0;
            for ch in rank_text.chars() {
                if let Some(d) = ch.to_digit(10) {
                    file += d as usize;
                    continue;
                }
                let kind = "pnbrqk".find(ch.to_ascii_lowercase()).unwrap();
                let ours = ch.is_ascii_uppercase() != black;
                let r = if black { 7 - rank } else { rank };
                let plane = slot * 13 + if ours { 0 } else { 6 } + kind;
                out[plane * 64 + r * 8 + file] = 1.0;
                file += 1;
            }
        }
        if fens[..idx].iter().any(|e| key(e) == key(fen)) {
            out[(slot * 13 + 12) * 64..(slot * 13 + 13) * 64].fill(1.0);
        }
    }
    let rights = current[2];
    let (us_q, us_k, them_q, them_k) = if black { ('q', 'k', 'Q', 'K') } else { ('Q', 'K', 'q', 'k') };
    let halfmove: f32 = current[4].parse().unwrap();
    let meta = [
        rights.contains(us_q) as u8 as f32,
        rights.contains(us_k) as u8 as f32,
        rights.contains(them_q) as u8 as f32,
        rights.contains(them_k) as u8 as f32,
        black as u8 as f32,
        halfmove / 100.0,
        0.0,
        1.0,
    ];
    for (i, v) in meta.iter().enumerate() {
        out[(104 + i) * 64..(105 + i) * 64].fill(*v);
    }
    out
}

fn game(fen: &str, moves: &str) -> Result<GameHistory, String> {
    let start = BoardState::from_fen(fen).map_err(|e| e.to_string())?;
    let moves: Vec<String> = moves.split_whitespace().map(String::from).collect();
    GameHistory::from_uci(start, &moves).map_err(|e| e.to_string())
}

fn compare_planes(g: &GameHistory, label: &str) -> Result<(), String> {
    let fens: Vec<String> = g.boards().iter().map(BoardState::to_fen).collect();
    let expected = naive_planes(&fens);
    let got = encode_planes(&g.stack());
    for (i, (a, b)) in got.as_slice().iter().zip(&expected).enumerate() {
        ensure(a == b, format!("{label}: plane {} cell {} is {a}, naive {b}", i / 64, i % 64))?;
    }
    Ok(())
}

const START: &str = "rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1";

pub fn perft_and_planes() -> Outcome {
    let mut nodes = 0;
    for fen in PERFT_SUITE {
        let ours = BoardState::from_fen(fen).map_err(|e| format!("{fen}: {e}"))?;
        let pos = oracle(fen)?;
        let mut ours_moves: Vec<String> = ours.legal_moves().into_iter().map(uci).collect();
        let mut theirs: Vec<String> = pos.legal_moves().iter().map(|m| m.to_uci(CastlingMode::Standard).to_string()).collect();
        ours_moves.sort();
        theirs.sort();
        ensure(ours_moves == theirs, format!("{fen}: move lists differ"))?;
        for depth in 1..=3 {
            let a = perft(&ours, depth);
            let b = shakmaty::perft(&pos, depth);
            ensure(a == b, format!("{fen} depth {depth}: {a} vs {b}"))?;
            nodes += a;
        }
    }
    let curated = [
        ("start", game(START, "")?),
        ("after e4", game(START, "e2e4")?),
        ("castling rights and clock", game("r3k2r/p1ppqpb1/bn2pnp1/3PN3/1p2P3/2N2Q1p/PPPBBPPP/R3K2R w KQkq - 37 60", "a1b1 a8b8")?),
        ("repetitions past eight plies", game(START, "g1f3 g8f6 f3g1 f6g8 g1f3 g8f6 f3g1 f6g8 e2e4")?),
        ("black with en passant", game("4k3/1P6/8/8/3p4/8/4P1p1/4K3 w - - 0 1", "e2e4")?),
    ];
    for (label, g) in &curated {
        compare_planes(g, label)?;
    }
    Ok(format!("{} positions x depth 1-3 ({nodes} nodes) match; {} curated encodings match", PERFT_SUITE.len(), curated.len()))
}
