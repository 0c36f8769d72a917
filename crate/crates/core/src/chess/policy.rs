//! The 1858-entry policy index.
//!
//! Entries 0..1792 are every queen-line and knight-jump (from, to) pattern, ordered by
//! from-square then to-square. Entries 1792..1858 are the queen, rook and bishop
//! promotions from the 7th to the 8th rank, ordered by (from, to, Q/R/B). A knight
//! promotion uses the plain pattern. Moves are expressed in the mover's frame, so
//! black moves are mirrored before lookup.

use std::sync::OnceLock;

use super::{Color, Move, PieceKind, Square};
use crate::error::{Error, Result};

pub const POLICY_SIZE: usize = 1858;

const EXTRA_PROMOTIONS: [PieceKind; 3] = [PieceKind::Queen, PieceKind::Rook, PieceKind::Bishop];
const NONE: u16 = u16::MAX;

/// Bidirectional map between move patterns and policy indices.
pub struct PolicyIndexTable {
    entries: Vec<Move>,
    plain: Vec<u16>,
    promo: Vec<u16>,
}

fn is_queen_line(from: Square, to: Square) -> bool {
    let df = (to.file() as i8 - from.file() as i8).abs();
    let dr = (to.rank() as i8 - from.rank() as i8).abs();
    (df == 0) != (dr == 0) || (df == dr && df != 0)
}

fn is_knight_jump(from: Square, to: Square) -> bool {
    let df = (to.file() as i8 - from.file() as i8).abs();
    let dr = (to.rank() as i8 - from.rank() as i8).abs();
    (df == 1 && dr == 2) || (df == 2 && dr == 1)
}

fn promo_slot(kind: PieceKind) -> Option<usize> {
    EXTRA_PROMOTIONS.iter().position(|&k| k == kind)
}

impl PolicyIndexTable {
    fn build() -> PolicyIndexTable {
        let mut entries = Vec::with_capacity(POLICY_SIZE);
        let mut plain = vec![NONE; 64 * 64];
        let mut promo = vec![NONE; 64 * 64 * 3];
        for from in Square::all() {
            for to in Square::all() {
                if is_queen_line(from, to) || is_knight_jump(from, to) {
                    plain[from.index() * 64 + to.index()] = entries.len() as u16;
                    entries.push(Move::new(from, to, None));
                }
            }
        }
        for from in Square::all().filter(|s| s.rank() == 6) {
            for to in Square::all().filter(|s| s.rank() == 7 && (s.file() as i8 - from.file() as i8).abs() <= 1) {
                for (slot, kind) in EXTRA_PROMOTIONS.iter().enumerate() {
                    promo[(from.index() * 64 + to.index()) * 3 + slot] = entries.len() as u16;
                    entries.push(Move::new(from, to, Some(*kind)));
                }
            }
        }
        debug_assert_eq!(entries.len(), POLICY_SIZE);
        PolicyIndexTable { entries, plain, promo }
    }

    pub fn get() -> &'static PolicyIndexTable {
        static TABLE: OnceLock<PolicyIndexTable> = OnceLock::new();
        TABLE.get_or_init(PolicyIndexTable::build)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Pattern stored at `index`, in the mover's (white-up) frame.
    pub fn pattern(&self, index: usize) -> Option<Move> {
        self.entries.get(index).copied()
    }

    /// Index of a pattern already expressed in the mover's frame.
    pub fn index_of(&self, m: Move) -> Option<usize> {
        let key = m.from.index() * 64 + m.to.index();
        let idx = match m.promotion {
            None | Some(PieceKind::Knight) => self.plain[key],
            Some(kind) => promo_slot(kind).map_or(NONE, |slot| self.promo[key * 3 + slot]),
        };
        (idx != NONE).then_some(idx as usize)
    }
}

fn orient(m: Move, mover: Color) -> Move {
    match mover {
        Color::White => m,
        Color::Black => Move::new(m.from.flip(), m.to.flip(), m.promotion),
    }
}

pub fn move_to_policy_index(m: Move, mover: Color) -> Result<usize> {
    PolicyIndexTable::get()
        .index_of(orient(m, mover))
        .ok_or_else(|| Error::UnmappableMove(m.to_uci()))
}

/// Inverse of [`move_to_policy_index`]; knight promotions come back without a promotion tag.
pub fn policy_index_to_move(index: usize, mover: Color) -> Result<Move> {
    PolicyIndexTable::get()
        .pattern(index)
        .map(|m| orient(m, mover))
        .ok_or_else(|| Error::InvalidInput(format!("policy index {index} out of range")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chess::BoardState;

    #[test]
    fn table_has_1858_entries_and_is_bijective() {
        let t = PolicyIndexTable::get();
        assert_eq!(t.len(), POLICY_SIZE);
        for i in 0..POLICY_SIZE {
            for mover in [Color::White, Color::Black] {
                let m = policy_index_to_move(i, mover).unwrap();
                assert_eq!(move_to_policy_index(m, mover).unwrap(), i);
            }
        }
    }

    #[test]
    fn knight_promotion_is_default() {
        let plain = Move::from_uci("a7a8").unwrap();
        let knight = Move::from_uci("a7a8n").unwrap();
        assert_eq!(
            move_to_policy_index(plain, Color::White).unwrap(),
            move_to_policy_index(knight, Color::White).unwrap()
        );
        let q = move_to_policy_index(Move::from_uci("a7a8q").unwrap(), Color::White).unwrap();
        assert!(q >= 1792);
        // Black promotes towards rank 1, which is rank 8 in its own frame.
        let bq = move_to_policy_index(Move::from_uci("b2a1q").unwrap(), Color::Black).unwrap();
        assert!(bq >= 1792);
    }

    #[test]
    fn unmappable_patterns_error() {
        assert!(move_to_policy_index(Move::from_uci("a1c4").unwrap(), Color::White).is_err());
        // Queen promotion from the wrong rank is not a pattern.
        assert!(move_to_policy_index(Move::from_uci("a6a7q").unwrap(), Color::White).is_err());
    }

    #[test]
    fn every_legal_move_maps() {
        for fen in [
            "rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1",
            "r3k2r/p1ppqpb1/bn2pnp1/3PN3/1p2P3/2N2Q1p/PPPBBPPP/R3K2R b KQkq - 0 1",
            "n1n5/PPPk4/8/8/8/8/4Kppp/5N1N b - - 0 1",
        ] {
            let b = BoardState::from_fen(fen).unwrap();
            for m in b.legal_moves() {
                assert!(move_to_policy_index(m, b.side_to_move()).is_ok(), "{m}");
            }
        }
    }
}
