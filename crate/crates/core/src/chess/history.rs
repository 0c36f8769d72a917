use std::collections::HashMap;

use super::board::PositionKey;
use super::{BoardState, GameStatus, Move};
use crate::error::{Error, Result};

/// Number of boards the network sees.
pub const HISTORY_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HistoryEntry {
    pub board: BoardState,
    /// The position occurred earlier in the game.
    pub repeated: bool,
}

/// Up to eight most recent boards, oldest first, most recent last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryStack {
    entries: Vec<HistoryEntry>,
}

impl HistoryStack {
    pub fn new(entries: Vec<HistoryEntry>) -> Result<HistoryStack> {
        if entries.is_empty() || entries.len() > HISTORY_LEN {
            return Err(Error::InvalidInput(format!(
                "history must hold 1..={HISTORY_LEN} boards, got {}",
                entries.len()
            )));
        }
        for pair in entries.windows(2) {
            let (prev, next) = (&pair[0].board, &pair[1].board);
            let connected = prev.legal_moves().iter().any(|&m| prev.make_move_unchecked(m) == *next);
            if !connected {
                return Err(Error::InvalidInput("history boards are not connected by a legal move".into()));
            }
        }
        Ok(HistoryStack { entries })
    }

    pub fn single(board: BoardState) -> HistoryStack {
        HistoryStack { entries: vec![HistoryEntry { board, repeated: false }] }
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn current(&self) -> &BoardState {
        &self.entries.last().expect("history is never empty").board
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Every position of a game from some starting board, with repetition counts.
#[derive(Debug, Clone)]
pub struct GameHistory {
    boards: Vec<BoardState>,
    moves: Vec<Move>,
    seen: HashMap<PositionKey, u32>,
}

impl GameHistory {
    pub fn new(start: BoardState) -> GameHistory {
        let mut seen = HashMap::new();
        seen.insert(start.position_key(), 1);
        GameHistory { boards: vec![start], moves: Vec::new(), seen }
    }

    /// Replays UCI moves from `start`, rejecting any illegal move.
    pub fn from_uci(start: BoardState, moves: &[String]) -> Result<GameHistory> {
        let mut game = GameHistory::new(start);
        for m in moves {
            game.push(Move::from_uci(m)?)?;
        }
        Ok(game)
    }

    pub fn current(&self) -> &BoardState {
        self.boards.last().expect("game history is never empty")
    }

    pub fn boards(&self) -> &[BoardState] {
        &self.boards
    }

    pub fn moves(&self) -> &[Move] {
        &self.moves
    }

    pub fn ply(&self) -> usize {
        self.moves.len()
    }

    pub fn push(&mut self, m: Move) -> Result<()> {
        let next = self.current().apply_move(m)?;
        self.push_unchecked(m, next);
        Ok(())
    }

    /// Appends a move already known to be legal together with its result.
    pub fn push_unchecked(&mut self, m: Move, next: BoardState) {
        *self.seen.entry(next.position_key()).or_insert(0) += 1;
        self.boards.push(next);
        self.moves.push(m);
    }

    /// Copy of the game extended by one legal move.
    pub fn child(&self, m: Move) -> Result<GameHistory> {
        let mut g = self.clone();
        g.push(m)?;
        Ok(g)
    }

    pub fn repetition_count(&self) -> u32 {
        self.seen.get(&self.current().position_key()).copied().unwrap_or(1)
    }

    pub fn status(&self) -> GameStatus {
        match self.current().status() {
            GameStatus::Ongoing if self.repetition_count() >= 3 => GameStatus::Repetition,
            s => s,
        }
    }

    /// The last (up to) eight boards with their repetition flags.
    pub fn stack(&self) -> HistoryStack {
        let n = self.boards.len();
        let start = n.saturating_sub(HISTORY_LEN);
        let mut counts: HashMap<PositionKey, u32> = HashMap::new();
        let mut entries = Vec::with_capacity(n - start);
        for (i, b) in self.boards.iter().enumerate() {
            let c = counts.entry(b.position_key()).or_insert(0);
            *c += 1;
            if i >= start {
                entries.push(HistoryEntry { board: *b, repeated: *c > 1 });
            }
        }
        HistoryStack { entries }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stack_keeps_last_eight() {
        let moves: Vec<String> =
            ["e2e4", "e7e5", "g1f3", "b8c6", "f1c4", "f8c5", "e1g1", "g8f6", "d2d3"].map(String::from).to_vec();
        let g = GameHistory::from_uci(BoardState::start(), &moves).unwrap();
        let s = g.stack();
        assert_eq!(s.len(), 8);
        assert_eq!(s.current(), g.current());
        assert!(HistoryStack::new(s.entries().to_vec()).is_ok());
    }

    #[test]
    fn repetition_flags_and_status() {
        let shuffle: Vec<String> =
            ["g1f3", "g8f6", "f3g1", "f6g8", "g1f3", "g8f6", "f3g1", "f6g8"].map(String::from).to_vec();
        let g = GameHistory::from_uci(BoardState::start(), &shuffle).unwrap();
        assert_eq!(g.repetition_count(), 3);
        assert_eq!(g.status(), GameStatus::Repetition);
        let s = g.stack();
        assert!(s.entries().last().unwrap().repeated);
    }

    #[test]
    fn disconnected_history_rejected() {
        let a = HistoryEntry { board: BoardState::start(), repeated: false };
        assert!(HistoryStack::new(vec![a, a]).is_err());
        assert!(HistoryStack::new(vec![]).is_err());
    }
}
