//! Chess rules, notation, and the network-facing encodings.
//!
//! Squares are indexed `rank * 8 + file` with a1 = 0 and h8 = 63. All types are
//! plain values; every operation here is a pure function.

mod board;
mod fen;
mod history;
mod movegen;
mod planes;
mod policy;
mod san;

pub use board::{BoardState, CastlingRights, GameStatus};
pub use history::{GameHistory, HistoryEntry, HistoryStack, HISTORY_LEN};
pub use movegen::perft;
pub use planes::{encode_planes, PlaneStack, META_PLANES, PLANES_PER_BOARD, PLANE_COUNT};
pub use policy::{move_to_policy_index, policy_index_to_move, PolicyIndexTable, POLICY_SIZE};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Color {
    White,
    Black,
}

impl Color {
    pub fn opposite(self) -> Color {
        match self {
            Color::White => Color::Black,
            Color::Black => Color::White,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Piece kinds, ordered by material value. The order doubles as the
/// promotion rank used for deterministic move sorting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PieceKind {
    Pawn,
    Knight,
    Bishop,
    Rook,
    Queen,
    King,
}

impl PieceKind {
    pub const ALL: [PieceKind; 6] = [
        PieceKind::Pawn,
        PieceKind::Knight,
        PieceKind::Bishop,
        PieceKind::Rook,
        PieceKind::Queen,
        PieceKind::King,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> PieceKind {
        Self::ALL[i]
    }

    /// Lowercase letter as used in FEN (black) and UCI promotions.
    pub fn letter(self) -> char {
        match self {
            PieceKind::Pawn => 'p',
            PieceKind::Knight => 'n',
            PieceKind::Bishop => 'b',
            PieceKind::Rook => 'r',
            PieceKind::Queen => 'q',
            PieceKind::King => 'k',
        }
    }

    pub fn from_letter(c: char) -> Option<PieceKind> {
        Some(match c.to_ascii_lowercase() {
            'p' => PieceKind::Pawn,
            'n' => PieceKind::Knight,
            'b' => PieceKind::Bishop,
            'r' => PieceKind::Rook,
            'q' => PieceKind::Queen,
            'k' => PieceKind::King,
            _ => return None,
        })
    }

    /// Conventional material value in pawns.
    pub fn value(self) -> f32 {
        match self {
            PieceKind::Pawn => 1.0,
            PieceKind::Knight => 3.0,
            PieceKind::Bishop => 3.0,
            PieceKind::Rook => 5.0,
            PieceKind::Queen => 9.0,
            PieceKind::King => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Piece {
    pub color: Color,
    pub kind: PieceKind,
}

impl Piece {
    pub fn new(color: Color, kind: PieceKind) -> Self {
        Piece { color, kind }
    }

    /// Index into the 12 occupancy sets: white pawn..king, then black.
    pub fn index(self) -> usize {
        self.color.index() * 6 + self.kind.index()
    }

    pub fn from_index(i: usize) -> Piece {
        let color = if i < 6 { Color::White } else { Color::Black };
        Piece::new(color, PieceKind::from_index(i % 6))
    }

    pub fn fen_char(self) -> char {
        let c = self.kind.letter();
        match self.color {
            Color::White => c.to_ascii_uppercase(),
            Color::Black => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Square(u8);

impl Square {
    pub fn new(index: u8) -> Square {
        assert!(index < 64, "square index out of range: {index}");
        Square(index)
    }

    pub fn from_coords(file: u8, rank: u8) -> Square {
        Square::new(rank * 8 + file)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn file(self) -> u8 {
        self.0 % 8
    }

    pub fn rank(self) -> u8 {
        self.0 / 8
    }

    /// Vertical mirror (a1 <-> a8), the black-perspective flip.
    pub fn flip(self) -> Square {
        Square(self.0 ^ 56)
    }

    pub fn bit(self) -> u64 {
        1u64 << self.0
    }

    pub fn offset(self, dfile: i8, drank: i8) -> Option<Square> {
        let f = self.file() as i8 + dfile;
        let r = self.rank() as i8 + drank;
        if (0..8).contains(&f) && (0..8).contains(&r) {
            Some(Square::from_coords(f as u8, r as u8))
        } else {
            None
        }
    }

    pub fn all() -> impl Iterator<Item = Square> {
        (0..64u8).map(Square)
    }
}

impl fmt::Display for Square {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", (b'a' + self.file()) as char, self.rank() + 1)
    }
}

impl FromStr for Square {
    type Err = Error;

    fn from_str(s: &str) -> Result<Square> {
        let b = s.as_bytes();
        if b.len() != 2 || !(b'a'..=b'h').contains(&b[0]) || !(b'1'..=b'8').contains(&b[1]) {
            return Err(Error::Parse(format!("bad square `{s}`")));
        }
        Ok(Square::from_coords(b[0] - b'a', b[1] - b'1'))
    }
}

/// A move in from/to/promotion form. Castling is the king's two-square move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Move {
    pub from: Square,
    pub to: Square,
    pub promotion: Option<PieceKind>,
}

impl Move {
    pub fn new(from: Square, to: Square, promotion: Option<PieceKind>) -> Move {
        Move { from, to, promotion }
    }

    pub fn to_uci(self) -> String {
        self.to_string()
    }

    pub fn from_uci(s: &str) -> Result<Move> {
        if !(4..=5).contains(&s.len()) || !s.is_ascii() {
            return Err(Error::Parse(format!("bad UCI move `{s}`")));
        }
        let from: Square = s[0..2].parse()?;
        let to: Square = s[2..4].parse()?;
        let promotion = match s[4..].chars().next() {
            None => None,
            Some(c) => match PieceKind::from_letter(c) {
                Some(k) if matches!(k, PieceKind::Knight | PieceKind::Bishop | PieceKind::Rook | PieceKind::Queen) => {
                    Some(k)
                }
                _ => return Err(Error::Parse(format!("bad promotion in `{s}`"))),
            },
        };
        if from == to {
            return Err(Error::Parse(format!("null move `{s}`")));
        }
        Ok(Move { from, to, promotion })
    }
}

impl fmt::Display for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.from, self.to)?;
        if let Some(p) = self.promotion {
            write!(f, "{}", p.letter())?;
        }
        Ok(())
    }
}

impl FromStr for Move {
    type Err = Error;

    fn from_str(s: &str) -> Result<Move> {
        Move::from_uci(s)
    }
}

impl serde::Serialize for Move {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Move {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Move, D::Error> {
        let s = String::deserialize(d)?;
        Move::from_uci(&s).map_err(serde::de::Error::custom)
    }
}
