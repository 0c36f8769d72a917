//! The 112x8x8 input tensor.
//!
//! Layout (plane index, cell = rank * 8 + file in the mover's frame):
//!
//! * `13 * slot + 0..6`   side-to-move pieces (P, N, B, R, Q, K), slot 0 = current board
//! * `13 * slot + 6..12`  opponent pieces, same order
//! * `13 * slot + 12`     all ones if the board repeats an earlier position
//! * `104..112`           castle-queenside-us, castle-kingside-us, castle-queenside-them,
//!   castle-kingside-them, color (ones when black moves), halfmove clock / 100, zeros, ones
//!
//! Boards are mirrored vertically when black is to move, so "us" always plays up the board.
//! Slots beyond the available history stay zero.

use super::{Color, HistoryStack, Piece, PieceKind, Square, HISTORY_LEN};

pub const PLANES_PER_BOARD: usize = 13;
pub const META_PLANES: usize = 8;
pub const PLANE_COUNT: usize = HISTORY_LEN * PLANES_PER_BOARD + META_PLANES;

#[derive(Clone, PartialEq)]
pub struct PlaneStack {
    data: Vec<f32>,
}

impl std::fmt::Debug for PlaneStack {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PlaneStack").field("nonzero", &self.data.iter().filter(|v| **v != 0.0).count()).finish()
    }
}

impl PlaneStack {
    pub fn zeros() -> PlaneStack {
        PlaneStack { data: vec![0.0; PLANE_COUNT * 64] }
    }

    pub fn from_vec(data: Vec<f32>) -> Option<PlaneStack> {
        (data.len() == PLANE_COUNT * 64).then_some(PlaneStack { data })
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, p: usize) -> &[f32] {
        &self.data[p * 64..(p + 1) * 64]
    }

    pub fn get(&self, plane: usize, cell: usize) -> f32 {
        self.data[plane * 64 + cell]
    }

    fn fill(&mut self, plane: usize, value: f32) {
        self.data[plane * 64..(plane + 1) * 64].fill(value);
    }

    /// Vertical mirror of every plane; applying it twice is the identity.
    pub fn mirrored(&self) -> PlaneStack {
        let mut out = PlaneStack::zeros();
        for p in 0..PLANE_COUNT {
            for cell in 0..64 {
                out.data[p * 64 + (cell ^ 56)] = self.data[p * 64 + cell];
            }
        }
        out
    }
}

/// Encodes a history stack (most recent board last) from its current mover's view.
pub fn encode_planes(history: &HistoryStack) -> PlaneStack {
    let mut planes = PlaneStack::zeros();
    let current = history.current();
    let us = current.side_to_move();
    let them = us.opposite();
    let orient = |sq: Square| if us == Color::Black { sq.flip() } else { sq };

    for (slot, entry) in history.entries().iter().rev().enumerate() {
        let base = slot * PLANES_PER_BOARD;
        for (offset, color) in [(0, us), (6, them)] {
            for kind in PieceKind::ALL {
                let mut bb = entry.board.bitboard(Piece::new(color, kind));
                while bb != 0 {
                    let sq = Square::new(bb.trailing_zeros() as u8);
                    bb &= bb - 1;
                    planes.data[(base + offset + kind.index()) * 64 + orient(sq).index()] = 1.0;
                }
            }
        }
        if entry.repeated {
            planes.fill(base + 12, 1.0);
        }
    }

    let meta = HISTORY_LEN * PLANES_PER_BOARD;
    let castling = current.castling();
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    planes.fill(meta, flag(castling.queenside(us)));
    planes.fill(meta + 1, flag(castling.kingside(us)));
    planes.fill(meta + 2, flag(castling.queenside(them)));
    planes.fill(meta + 3, flag(castling.kingside(them)));
    planes.fill(meta + 4, flag(us == Color::Black));
    planes.fill(meta + 5, current.halfmove_clock() as f32 / 100.0);
    planes.fill(meta + 7, 1.0);
    planes
}
