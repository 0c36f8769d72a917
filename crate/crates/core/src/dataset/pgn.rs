//! Minimal PGN reader: tag pairs, SAN movetext, comments, variations and NAGs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chess::{BoardState, Move};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameRecord {
    /// `{file stem}:{index within file}`.
    pub id: String,
    /// UCI moves from the standard start position.
    pub moves: Vec<String>,
    pub result: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgnFilter {
    /// Games shorter than this are dropped.
    pub min_plies: usize,
}

impl Default for PgnFilter {
    fn default() -> Self {
        PgnFilter { min_plies: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub games: Vec<GameRecord>,
    pub skipped_illegal: usize,
    pub skipped_truncated: usize,
    pub skipped_custom_start: usize,
    pub skipped_short: usize,
}

impl IngestReport {
    pub fn skipped(&self) -> usize {
        self.skipped_illegal + self.skipped_truncated + self.skipped_custom_start + self.skipped_short
    }
}

struct RawGame {
    tags: Vec<(String, String)>,
    movetext: String,
}

fn parse_tag(line: &str) -> Option<(String, String)> {
    let inner = line.strip_prefix('[')?.strip_suffix(']')?;
    let (name, rest) = inner.split_once(char::is_whitespace)?;
    let value = rest.trim().strip_prefix('"')?.strip_suffix('"')?;
    Some((name.to_string(), value.replace("\\\"", "\"")))
}

fn split_games(text: &str) -> Vec<RawGame> {
    let mut games = Vec::new();
    let mut cur = RawGame { tags: Vec::new(), movetext: String::new() };
    for line in text.lines() {
        let t = line.trim();
        if t.starts_with('%') {
            continue;
        }
        if t.starts_with('[') {
            if !cur.movetext.trim().is_empty() {
                games.push(std::mem::replace(&mut cur, RawGame { tags: Vec::new(), movetext: String::new() }));
            }
            if let Some(tag) = parse_tag(t) {
                cur.tags.push(tag);
            }
        } else {
            cur.movetext.push_str(line);
            cur.movetext.push('\n');
        }
    }
    if !cur.tags.is_empty() || !cur.movetext.trim().is_empty() {
        games.push(cur);
    }
    games
}

const RESULTS: [&str; 4] = ["1-0", "0-1", "1/2-1/2", "*"];

// Movetext tokens with comments, variations and NAGs removed.
fn tokens(movetext: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut chars = movetext.chars();
    let mut word = String::new();
    let flush = |w: &mut String, out: &mut Vec<String>| {
        if !w.is_empty() {
            out.push(std::mem::take(w));
        }
    };
    while let Some(c) = chars.next() {
        match c {
            '{' => {
                flush(&mut word, &mut out);
                for d in chars.by_ref() {
                    if d == '}' {
                        break;
                    }
                }
            }
            ';' => {
                flush(&mut word, &mut out);
                for d in chars.by_ref() {
                    if d == '\n' {
                        break;
                    }
                }
            }
            '(' => {
                flush(&mut word, &mut out);
                depth += 1;
            }
            ')' => {
                flush(&mut word, &mut out);
                depth = depth.saturating_sub(1);
            }
            c if c.is_whitespace() => flush(&mut word, &mut out),
            c if depth == 0 => word.push(c),
            _ => {}
        }
    }
    flush(&mut word, &mut out);
    out.into_iter()
        .filter(|t| !t.starts_with('$'))
        .map(|t| {
            // "12.e4" and "12...e5" carry the move after the number.
            match t.rfind('.') {
                Some(i) if t[..i].chars().all(|c| c.is_ascii_digit() || c == '.') => t[i + 1..].to_string(),
                _ => t,
            }
        })
        .filter(|t| !t.is_empty())
        .collect()
}

enum Parsed {
    Game(Vec<Move>, String),
    Illegal,
    Truncated,
    CustomStart,
}

fn parse_game(raw: &RawGame) -> Parsed {
    if raw.tags.iter().any(|(k, v)| k == "FEN" || (k == "SetUp" && v == "1")) {
        return Parsed::CustomStart;
    }
    let mut board = BoardState::start();
    let mut moves = Vec::new();
    for tok in tokens(&raw.movetext) {
        if RESULTS.contains(&tok.as_str()) {
            return Parsed::Game(moves, tok);
        }
        match board.parse_san(&tok) {
            Ok(m) => {
                board = board.apply_move(m).expect("parse_san yields legal moves");
                moves.push(m);
            }
            Err(_) => return Parsed::Illegal,
        }
    }
    Parsed::Truncated
}

/// Parses PGN text. Games with illegal moves, a missing result terminator, or a custom
/// start position are skipped and counted.
pub fn parse_pgn(text: &str, source: &str, filter: &PgnFilter) -> IngestReport {
    let mut report = IngestReport::default();
    for (i, raw) in split_games(text).iter().enumerate() {
        match parse_game(raw) {
            Parsed::Game(moves, result) => {
                if moves.len() < filter.min_plies {
                    report.skipped_short += 1;
                    continue;
                }
                report.games.push(GameRecord {
                    id: format!("{source}:{i}"),
                    moves: moves.iter().map(|m| m.to_uci()).collect(),
                    result,
                    source: source.to_string(),
                });
            }
            Parsed::Illegal => report.skipped_illegal += 1,
            Parsed::Truncated => report.skipped_truncated += 1,
            Parsed::CustomStart => report.skipped_custom_start += 1,
        }
    }
    report
}

/// Reads every file in order; the source tag of a game is its file stem.
pub fn ingest_pgn(paths: &[impl AsRef<Path>], filter: &PgnFilter) -> Result<IngestReport> {
    let mut all = IngestReport::default();
    for path in paths {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let r = parse_pgn(&text, &stem, filter);
        all.games.extend(r.games);
        all.skipped_illegal += r.skipped_illegal;
        all.skipped_truncated += r.skipped_truncated;
        all.skipped_custom_start += r.skipped_custom_start;
        all.skipped_short += r.skipped_short;
    }
    if all.skipped() > 0 {
        log::info!(
            "skipped {} games ({} illegal, {} truncated, {} custom start, {} short)",
            all.skipped(),
            all.skipped_illegal,
            all.skipped_truncated,
            all.skipped_custom_start,
            all.skipped_short
        );
    }
    Ok(all)
}

#[cfg(test)]
pub(crate) const OPERA: &str = r#"[Event "Paris"]
[White "Morphy"]
[Black "Duke Karl / Count Isouard"]
[Result "1-0"]

1. e4 e5 2. Nf3 d6 3. d4 Bg4 {a weak move} 4. dxe5 Bxf3 5. Qxf3 dxe5 6. Bc4 Nf6 7. Qb3 Qe7
8. Nc3 c6 9. Bg5 b5 $6 10. Nxb5 cxb5 11. Bxb5+ Nbd7 12. O-O-O Rd8 13. Rxd7 Rxd7
14. Rd1 Qe6 (14... Qb4 15. Bxf6) 15. Bxd7+ Nxd7 16. Qb8+ Nxb8 17. Rd8# 1-0
"#;
