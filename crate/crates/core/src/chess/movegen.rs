use super::{BoardState, Color, Move, Piece, PieceKind, Square};

const KNIGHT_OFFSETS: [(i8, i8); 8] = [(1, 2), (2, 1), (2, -1), (1, -2), (-1, -2), (-2, -1), (-2, 1), (-1, 2)];
const KING_OFFSETS: [(i8, i8); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];
const ROOK_DIRS: [(i8, i8); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
const BISHOP_DIRS: [(i8, i8); 4] = [(1, 1), (1, -1), (-1, 1), (-1, -1)];
const PROMOTIONS: [PieceKind; 4] = [PieceKind::Knight, PieceKind::Bishop, PieceKind::Rook, PieceKind::Queen];

impl BoardState {
    /// All legal moves for the side to move, sorted by (from, to, promotion).
    pub fn legal_moves(&self) -> Vec<Move> {
        let us = self.side_to_move;
        let mut moves: Vec<Move> = self
            .pseudo_legal_moves()
            .into_iter()
            .filter(|&m| {
                let next = self.make_move_unchecked(m);
                !next.is_attacked(next.king_square(us), us.opposite())
            })
            .collect();
        moves.sort_unstable();
        moves
    }

    /// Is `sq` attacked by any piece of color `by`?
    pub fn is_attacked(&self, sq: Square, by: Color) -> bool {
        let occ = self.occupied();
        let piece_bb = |kind| self.pieces[Piece::new(by, kind).index()];

        // A pawn of `by` attacks sq if it sits one rank behind sq from by's view.
        let pawn_rank = if by == Color::White { -1 } else { 1 };
        for df in [-1, 1] {
            if let Some(s) = sq.offset(df, pawn_rank) {
                if piece_bb(PieceKind::Pawn) & s.bit() != 0 {
                    return true;
                }
            }
        }
        for (df, dr) in KNIGHT_OFFSETS {
            if let Some(s) = sq.offset(df, dr) {
                if piece_bb(PieceKind::Knight) & s.bit() != 0 {
                    return true;
                }
            }
        }
        for (df, dr) in KING_OFFSETS {
            if let Some(s) = sq.offset(df, dr) {
                if piece_bb(PieceKind::King) & s.bit() != 0 {
                    return true;
                }
            }
        }
        let straight = piece_bb(PieceKind::Rook) | piece_bb(PieceKind::Queen);
        let diagonal = piece_bb(PieceKind::Bishop) | piece_bb(PieceKind::Queen);
        for (dirs, attackers) in [(ROOK_DIRS, straight), (BISHOP_DIRS, diagonal)] {
            if attackers == 0 {
                continue;
            }
            for (df, dr) in dirs {
                let mut cur = sq;
                while let Some(s) = cur.offset(df, dr) {
                    if occ & s.bit() != 0 {
                        if attackers & s.bit() != 0 {
                            return true;
                        }
                        break;
                    }
                    cur = s;
                }
            }
        }
        false
    }

    fn pseudo_legal_moves(&self) -> Vec<Move> {
        let us = self.side_to_move;
        let own = self.occupancy(us);
        let enemy = self.occupancy(us.opposite());
        let occ = own | enemy;
        let mut out = Vec::with_capacity(64);

        for from in Square::all() {
            if own & from.bit() == 0 {
                continue;
            }
            let kind = self.piece_at(from).expect("own square occupied").kind;
            match kind {
                PieceKind::Pawn => self.pawn_moves(from, enemy, occ, &mut out),
                PieceKind::Knight => leaper_moves(from, &KNIGHT_OFFSETS, own, &mut out),
                PieceKind::King => {
                    leaper_moves(from, &KING_OFFSETS, own, &mut out);
                    self.castling_moves(from, occ, &mut out);
                }
                PieceKind::Bishop => slider_moves(from, &BISHOP_DIRS, own, occ, &mut out),
                PieceKind::Rook => slider_moves(from, &ROOK_DIRS, own, occ, &mut out),
                PieceKind::Queen => {
                    slider_moves(from, &BISHOP_DIRS, own, occ, &mut out);
                    slider_moves(from, &ROOK_DIRS, own, occ, &mut out);
                }
            }
        }
        out
    }

    fn pawn_moves(&self, from: Square, enemy: u64, occ: u64, out: &mut Vec<Move>) {
        let (dir, start_rank, last_rank) = match self.side_to_move {
            Color::White => (1i8, 1u8, 7u8),
            Color::Black => (-1, 6, 0),
        };
        let push = |to: Square, out: &mut Vec<Move>| {
            if to.rank() == last_rank {
                for p in PROMOTIONS {
                    out.push(Move::new(from, to, Some(p)));
                }
            } else {
                out.push(Move::new(from, to, None));
            }
        };
        if let Some(one) = from.offset(0, dir) {
            if occ & one.bit() == 0 {
                push(one, out);
                if from.rank() == start_rank {
                    let two = one.offset(0, dir).expect("double push stays on board");
                    if occ & two.bit() == 0 {
                        out.push(Move::new(from, two, None));
                    }
                }
            }
        }
        for df in [-1, 1] {
            if let Some(to) = from.offset(df, dir) {
                if enemy & to.bit() != 0 || Some(to) == self.en_passant {
                    push(to, out);
                }
            }
        }
    }

    fn castling_moves(&self, from: Square, occ: u64, out: &mut Vec<Move>) {
        let us = self.side_to_move;
        let rank = if us == Color::White { 0 } else { 7 };
        if from != Square::from_coords(4, rank) {
            return;
        }
        let them = us.opposite();
        let rook = self.pieces[Piece::new(us, PieceKind::Rook).index()];
        let empty = |files: &[u8]| files.iter().all(|&f| occ & Square::from_coords(f, rank).bit() == 0);
        let safe = |files: &[u8]| files.iter().all(|&f| !self.is_attacked(Square::from_coords(f, rank), them));

        if self.castling.kingside(us)
            && rook & Square::from_coords(7, rank).bit() != 0
            && empty(&[5, 6])
            && safe(&[4, 5, 6])
        {
            out.push(Move::new(from, Square::from_coords(6, rank), None));
        }
        if self.castling.queenside(us)
            && rook & Square::from_coords(0, rank).bit() != 0
            && empty(&[1, 2, 3])
            && safe(&[4, 3, 2])
        {
            out.push(Move::new(from, Square::from_coords(2, rank), None));
        }
    }
}

fn leaper_moves(from: Square, offsets: &[(i8, i8)], own: u64, out: &mut Vec<Move>) {
    for &(df, dr) in offsets {
        if let Some(to) = from.offset(df, dr) {
            if own & to.bit() == 0 {
                out.push(Move::new(from, to, None));
            }
        }
    }
}

fn slider_moves(from: Square, dirs: &[(i8, i8)], own: u64, occ: u64, out: &mut Vec<Move>) {
    for &(df, dr) in dirs {
        let mut cur = from;
        while let Some(to) = cur.offset(df, dr) {
            if own & to.bit() != 0 {
                break;
            }
            out.push(Move::new(from, to, None));
            if occ & to.bit() != 0 {
                break;
            }
            cur = to;
        }
    }
}

/// Leaf count of the legal move tree to `depth`.
pub fn perft(board: &BoardState, depth: u32) -> u64 {
    if depth == 0 {
        return 1;
    }
    let moves = board.legal_moves();
    if depth == 1 {
        return moves.len() as u64;
    }
    moves.iter().map(|&m| perft(&board.make_move_unchecked(m), depth - 1)).sum()
}
