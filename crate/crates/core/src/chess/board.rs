use super::{Color, Move, Piece, PieceKind, Square};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct CastlingRights {
    pub white_kingside: bool,
    pub white_queenside: bool,
    pub black_kingside: bool,
    pub black_queenside: bool,
}

impl CastlingRights {
    pub fn all() -> Self {
        CastlingRights {
            white_kingside: true,
            white_queenside: true,
            black_kingside: true,
            black_queenside: true,
        }
    }

    pub fn kingside(&self, color: Color) -> bool {
        match color {
            Color::White => self.white_kingside,
            Color::Black => self.black_kingside,
        }
    }

    pub fn queenside(&self, color: Color) -> bool {
        match color {
            Color::White => self.white_queenside,
            Color::Black => self.black_queenside,
        }
    }

    fn clear_color(&mut self, color: Color) {
        match color {
            Color::White => {
                self.white_kingside = false;
                self.white_queenside = false;
            }
            Color::Black => {
                self.black_kingside = false;
                self.black_queenside = false;
            }
        }
    }

    /// Drops the right tied to a rook home square touched by a move.
    fn clear_corner(&mut self, sq: Square) {
        match sq.index() {
            0 => self.white_queenside = false,
            7 => self.white_kingside = false,
            56 => self.black_queenside = false,
            63 => self.black_kingside = false,
            _ => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GameStatus {
    Ongoing,
    Checkmate,
    Stalemate,
    FiftyMoveRule,
    InsufficientMaterial,
    Repetition,
}

impl GameStatus {
    pub fn is_over(self) -> bool {
        self != GameStatus::Ongoing
    }
}

/// Full chess position: 12 occupancy sets plus the FEN bookkeeping fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoardState {
    pub(super) pieces: [u64; 12],
    pub(super) side_to_move: Color,
    pub(super) castling: CastlingRights,
    pub(super) en_passant: Option<Square>,
    pub(super) halfmove_clock: u32,
    pub(super) fullmove_number: u32,
}

/// Identity used for repetition detection (clocks excluded).
pub(super) type PositionKey = ([u64; 12], Color, CastlingRights, Option<Square>);

impl Default for BoardState {
    fn default() -> Self {
        BoardState::start()
    }
}

impl BoardState {
    pub fn start() -> BoardState {
        BoardState::from_fen("rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1")
            .expect("start position parses")
    }

    /// Builds a position from raw parts and checks the structural invariants.
    pub fn from_parts(
        pieces: [u64; 12],
        side_to_move: Color,
        castling: CastlingRights,
        en_passant: Option<Square>,
        halfmove_clock: u32,
        fullmove_number: u32,
    ) -> Result<BoardState> {
        let board = BoardState {
            pieces,
            side_to_move,
            castling,
            en_passant,
            halfmove_clock,
            fullmove_number: fullmove_number.max(1),
        };
        board.validate()?;
        Ok(board)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = 0u64;
        for bb in self.pieces {
            if seen & bb != 0 {
                return Err(Error::InvalidPosition("overlapping piece sets".into()));
            }
            seen |= bb;
        }
        for color in [Color::White, Color::Black] {
            let kings = self.pieces[Piece::new(color, PieceKind::King).index()].count_ones();
            if kings != 1 {
                return Err(Error::InvalidPosition(format!("{color:?} has {kings} kings")));
            }
        }
        if let Some(ep) = self.en_passant {
            if ep.rank() != 2 && ep.rank() != 5 {
                return Err(Error::InvalidPosition(format!("en-passant square {ep} off rank 3/6")));
            }
        }
        let pawns = self.pieces[0] | self.pieces[6];
        if pawns & 0xFF00_0000_0000_00FF != 0 {
            return Err(Error::InvalidPosition("pawn on first or last rank".into()));
        }
        Ok(())
    }

    pub fn side_to_move(&self) -> Color {
        self.side_to_move
    }

    pub fn castling(&self) -> CastlingRights {
        self.castling
    }

    pub fn en_passant(&self) -> Option<Square> {
        self.en_passant
    }

    pub fn halfmove_clock(&self) -> u32 {
        self.halfmove_clock
    }

    pub fn fullmove_number(&self) -> u32 {
        self.fullmove_number
    }

    pub fn bitboard(&self, piece: Piece) -> u64 {
        self.pieces[piece.index()]
    }

    pub fn occupancy(&self, color: Color) -> u64 {
        let base = color.index() * 6;
        self.pieces[base..base + 6].iter().fold(0, |acc, bb| acc | bb)
    }

    pub fn occupied(&self) -> u64 {
        self.pieces.iter().fold(0, |acc, bb| acc | bb)
    }

    pub fn piece_at(&self, sq: Square) -> Option<Piece> {
        let bit = sq.bit();
        self.pieces.iter().position(|bb| bb & bit != 0).map(Piece::from_index)
    }

    pub fn piece_count(&self) -> u32 {
        self.occupied().count_ones()
    }

    pub fn king_square(&self, color: Color) -> Square {
        let bb = self.pieces[Piece::new(color, PieceKind::King).index()];
        Square::new(bb.trailing_zeros() as u8)
    }

    pub fn in_check(&self) -> bool {
        let us = self.side_to_move;
        self.is_attacked(self.king_square(us), us.opposite())
    }

    pub(super) fn position_key(&self) -> PositionKey {
        (self.pieces, self.side_to_move, self.castling, self.en_passant)
    }

    /// Material (in pawns) for `color`.
    pub fn material(&self, color: Color) -> f32 {
        PieceKind::ALL
            .iter()
            .map(|&k| self.pieces[Piece::new(color, k).index()].count_ones() as f32 * k.value())
            .sum()
    }

    /// True when neither side can possibly mate: bare kings, or a single minor piece.
    pub fn insufficient_material(&self) -> bool {
        let heavy_or_pawn = [PieceKind::Pawn, PieceKind::Rook, PieceKind::Queen]
            .iter()
            .any(|&k| self.pieces[k.index()] | self.pieces[6 + k.index()] != 0);
        if heavy_or_pawn {
            return false;
        }
        let minors = (self.pieces[1] | self.pieces[2] | self.pieces[7] | self.pieces[8]).count_ones();
        minors <= 1
    }

    /// Status from the position alone (repetition needs the game history).
    pub fn status(&self) -> GameStatus {
        if self.legal_moves().is_empty() {
            if self.in_check() {
                GameStatus::Checkmate
            } else {
                GameStatus::Stalemate
            }
        } else if self.halfmove_clock >= 100 {
            GameStatus::FiftyMoveRule
        } else if self.insufficient_material() {
            GameStatus::InsufficientMaterial
        } else {
            GameStatus::Ongoing
        }
    }

    /// Checked move application: `m` must be one of `legal_moves()`.
    pub fn apply_move(&self, m: Move) -> Result<BoardState> {
        if !self.legal_moves().contains(&m) {
            return Err(Error::IllegalMove(m.to_uci()));
        }
        Ok(self.make_move_unchecked(m))
    }

    /// Applies a pseudo-legal move without verifying legality.
    pub(super) fn make_move_unchecked(&self, m: Move) -> BoardState {
        let mut next = *self;
        let us = self.side_to_move;
        let them = us.opposite();
        let mover = self.piece_at(m.from).expect("move from an empty square");
        let from_bit = m.from.bit();
        let to_bit = m.to.bit();

        let mut captured = false;
        for bb in next.pieces[them.index() * 6..them.index() * 6 + 6].iter_mut() {
            if *bb & to_bit != 0 {
                *bb &= !to_bit;
                captured = true;
            }
        }

        let mi = mover.index();
        next.pieces[mi] &= !from_bit;
        let placed = match m.promotion {
            Some(kind) if mover.kind == PieceKind::Pawn => Piece::new(us, kind),
            _ => mover,
        };
        next.pieces[placed.index()] |= to_bit;

        if mover.kind == PieceKind::Pawn && Some(m.to) == self.en_passant {
            let victim = Square::from_coords(m.to.file(), m.from.rank());
            next.pieces[Piece::new(them, PieceKind::Pawn).index()] &= !victim.bit();
            captured = true;
        }

        if mover.kind == PieceKind::King {
            next.castling.clear_color(us);
            let df = m.to.file() as i8 - m.from.file() as i8;
            if df.abs() == 2 {
                let rank = m.from.rank();
                let (rook_from, rook_to) = if df > 0 { (7, 5) } else { (0, 3) };
                let rook = Piece::new(us, PieceKind::Rook).index();
                next.pieces[rook] &= !Square::from_coords(rook_from, rank).bit();
                next.pieces[rook] |= Square::from_coords(rook_to, rank).bit();
            }
        }
        next.castling.clear_corner(m.from);
        next.castling.clear_corner(m.to);

        next.en_passant = None;
        if mover.kind == PieceKind::Pawn && (m.to.rank() as i8 - m.from.rank() as i8).abs() == 2 {
            next.en_passant = Some(Square::from_coords(m.from.file(), (m.from.rank() + m.to.rank()) / 2));
        }

        next.halfmove_clock = if captured || mover.kind == PieceKind::Pawn { 0 } else { self.halfmove_clock + 1 };
        if us == Color::Black {
            next.fullmove_number += 1;
        }
        next.side_to_move = them;
        next
    }
}
