//! Standard algebraic notation, as found in PGN movetext.

use super::{BoardState, Move, PieceKind, Square};
use crate::error::{Error, Result};

impl BoardState {
    /// Resolves a SAN token (e.g. `Nbd7`, `exd5`, `O-O`, `e8=Q+`) to a legal move.
    pub fn parse_san(&self, san: &str) -> Result<Move> {
        let bad = || Error::Parse(format!("bad SAN `{san}`"));
        let s = san.trim_end_matches(['+', '#', '!', '?']);
        let legal = self.legal_moves();
        let king_from = self.king_square(self.side_to_move);

        let castle = match s {
            "O-O" | "0-0" => Some(6),
            "O-O-O" | "0-0-0" => Some(2),
            _ => None,
        };
        if let Some(file) = castle {
            let target = Square::from_coords(file, king_from.rank());
            let is_king = self.piece_at(king_from).map(|p| p.kind) == Some(PieceKind::King);
            return legal
                .into_iter()
                .find(|m| is_king && m.from == king_from && m.to == target && king_from.file() == 4)
                .ok_or_else(|| Error::IllegalMove(san.to_string()));
        }

        let (body, promotion) = match s.split_once('=') {
            Some((b, p)) => {
                let mut pc = p.chars();
                let kind = pc.next().and_then(PieceKind::from_letter).ok_or_else(bad)?;
                if pc.next().is_some() {
                    return Err(bad());
                }
                (b, Some(kind))
            }
            None => {
                let last = s.chars().last().ok_or_else(bad)?;
                let pawnish = s.chars().next().is_some_and(|c| c.is_ascii_lowercase());
                if pawnish && "QRBN".contains(last) {
                    (&s[..s.len() - 1], PieceKind::from_letter(last))
                } else {
                    (s, None)
                }
            }
        };

        let (kind, rest) = match body.chars().next() {
            Some(c @ ('K' | 'Q' | 'R' | 'B' | 'N')) => (PieceKind::from_letter(c).unwrap(), &body[1..]),
            Some(_) => (PieceKind::Pawn, body),
            None => return Err(bad()),
        };
        let rest: String = rest.chars().filter(|&c| c != 'x' && c != ':' && c != '-').collect();
        if rest.len() < 2 || !rest.is_ascii() {
            return Err(bad());
        }
        let to: Square = rest[rest.len() - 2..].parse().map_err(|_| bad())?;
        let disamb = &rest[..rest.len() - 2];
        let mut file_hint = None;
        let mut rank_hint = None;
        for c in disamb.chars() {
            match c {
                'a'..='h' => file_hint = Some(c as u8 - b'a'),
                '1'..='8' => rank_hint = Some(c as u8 - b'1'),
                _ => return Err(bad()),
            }
        }

        let mut candidates = legal.into_iter().filter(|m| {
            m.to == to
                && self.piece_at(m.from).map(|p| p.kind) == Some(kind)
                && file_hint.is_none_or(|f| m.from.file() == f)
                && rank_hint.is_none_or(|r| m.from.rank() == r)
                && m.promotion == promotion
        });
        match (candidates.next(), candidates.next()) {
            (Some(m), None) => Ok(m),
            (Some(_), Some(_)) => Err(Error::Parse(format!("ambiguous SAN `{san}`"))),
            (None, _) => Err(Error::IllegalMove(san.to_string())),
        }
    }

    /// Renders a legal move in SAN, including check and mate suffixes.
    pub fn to_san(&self, m: Move) -> String {
        let piece = self.piece_at(m.from).expect("SAN of a move from an empty square");
        let mut out = String::new();
        let df = m.to.file() as i8 - m.from.file() as i8;
        if piece.kind == PieceKind::King && df.abs() == 2 {
            out.push_str(if df > 0 { "O-O" } else { "O-O-O" });
        } else {
            let capture = self.piece_at(m.to).is_some()
                || (piece.kind == PieceKind::Pawn && Some(m.to) == self.en_passant);
            if piece.kind == PieceKind::Pawn {
                if capture {
                    out.push((b'a' + m.from.file()) as char);
                }
            } else {
                out.push(piece.kind.letter().to_ascii_uppercase());
                let rivals: Vec<Move> = self
                    .legal_moves()
                    .into_iter()
                    .filter(|o| o.to == m.to && o.from != m.from && self.piece_at(o.from) == Some(piece))
                    .collect();
                if !rivals.is_empty() {
                    if rivals.iter().all(|o| o.from.file() != m.from.file()) {
                        out.push((b'a' + m.from.file()) as char);
                    } else if rivals.iter().all(|o| o.from.rank() != m.from.rank()) {
                        out.push((b'1' + m.from.rank()) as char);
                    } else {
                        out.push_str(&m.from.to_string());
                    }
                }
            }
            if capture {
                out.push('x');
            }
            out.push_str(&m.to.to_string());
            if let Some(p) = m.promotion {
                out.push('=');
                out.push(p.letter().to_ascii_uppercase());
            }
        }
        let next = self.make_move_unchecked(m);
        if next.in_check() {
            out.push(if next.legal_moves().is_empty() { '#' } else { '+' });
        }
        out
    }
}
