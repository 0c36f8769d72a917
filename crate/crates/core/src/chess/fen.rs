use std::fmt;

use super::{BoardState, CastlingRights, Color, Piece, PieceKind, Square};
use crate::error::{Error, Result};

impl BoardState {
    /// Parses a FEN string. The clock fields may be omitted (defaults 0 and 1).
    pub fn from_fen(fen: &str) -> Result<BoardState> {
        let bad = |why: &str| Error::Parse(format!("bad FEN `{fen}`: {why}"));
        let fields: Vec<&str> = fen.split_whitespace().collect();
        if fields.len() < 2 || fields.len() > 6 {
            return Err(bad("expected 2 to 6 fields"));
        }

        let mut pieces = [0u64; 12];
        let ranks: Vec<&str> = fields[0].split('/').collect();
        if ranks.len() != 8 {
            return Err(bad("expected 8 ranks"));
        }
        for (i, row) in ranks.iter().enumerate() {
            let rank = 7 - i as u8;
            let mut file = 0u8;
            for c in row.chars() {
                if let Some(d) = c.to_digit(10) {
                    if !(1..=8).contains(&d) {
                        return Err(bad("bad empty-square count"));
                    }
                    file += d as u8;
                } else {
                    let kind = PieceKind::from_letter(c).ok_or_else(|| bad("unknown piece letter"))?;
                    let color = if c.is_ascii_uppercase() { Color::White } else { Color::Black };
                    if file >= 8 {
                        return Err(bad("rank overflow"));
                    }
                    pieces[Piece::new(color, kind).index()] |= Square::from_coords(file, rank).bit();
                    file += 1;
                }
                if file > 8 {
                    return Err(bad("rank overflow"));
                }
            }
            if file != 8 {
                return Err(bad("short rank"));
            }
        }

        let side = match fields[1] {
            "w" => Color::White,
            "b" => Color::Black,
            _ => return Err(bad("side to move")),
        };

        let mut castling = CastlingRights::default();
        if let Some(&c) = fields.get(2) {
            if c != "-" {
                for ch in c.chars() {
                    match ch {
                        'K' => castling.white_kingside = true,
                        'Q' => castling.white_queenside = true,
                        'k' => castling.black_kingside = true,
                        'q' => castling.black_queenside = true,
                        _ => return Err(bad("castling field")),
                    }
                }
            }
        }

        let en_passant = match fields.get(3) {
            None | Some(&"-") => None,
            Some(s) => Some(s.parse::<Square>().map_err(|_| bad("en-passant square"))?),
        };
        let halfmove = match fields.get(4) {
            None => 0,
            Some(s) => s.parse().map_err(|_| bad("halfmove clock"))?,
        };
        let fullmove = match fields.get(5) {
            None => 1,
            Some(s) => s.parse().map_err(|_| bad("fullmove number"))?,
        };

        BoardState::from_parts(pieces, side, castling, en_passant, halfmove, fullmove)
    }

    pub fn to_fen(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for BoardState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for rank in (0..8).rev() {
            let mut empty = 0;
            for file in 0..8 {
                match self.piece_at(Square::from_coords(file, rank)) {
                    Some(p) => {
                        if empty > 0 {
                            write!(f, "{empty}")?;
                            empty = 0;
                        }
                        write!(f, "{}", p.fen_char())?;
                    }
                    None => empty += 1,
                }
            }
            if empty > 0 {
                write!(f, "{empty}")?;
            }
            if rank > 0 {
                write!(f, "/")?;
            }
        }
        let side = if self.side_to_move == Color::White { 'w' } else { 'b' };
        write!(f, " {side} ")?;
        let c = self.castling;
        let mut any = false;
        for (flag, ch) in [
            (c.white_kingside, 'K'),
            (c.white_queenside, 'Q'),
            (c.black_kingside, 'k'),
            (c.black_queenside, 'q'),
        ] {
            if flag {
                write!(f, "{ch}")?;
                any = true;
            }
        }
        if !any {
            write!(f, "-")?;
        }
        match self.en_passant {
            Some(sq) => write!(f, " {sq}")?,
            None => write!(f, " -")?,
        }
        write!(f, " {} {}", self.halfmove_clock, self.fullmove_number)
    }
}

impl serde::Serialize for BoardState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for BoardState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<BoardState, D::Error> {
        let s = String::deserialize(d)?;
        BoardState::from_fen(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fen_round_trip() {
        for fen in [
            "rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1",
            "r3k2r/p1ppqpb1/bn2pnp1/3PN3/1p2P3/2N2Q1p/PPPBBPPP/R3K2R w KQkq - 0 1",
            "8/2p5/3p4/KP5r/1R3p1k/8/4P1P1/8 w - - 0 1",
            "rnbqkbnr/pppp1ppp/8/4p3/4P3/8/PPPP1PPP/RNBQKBNR w KQkq e6 0 2",
        ] {
            assert_eq!(BoardState::from_fen(fen).unwrap().to_fen(), fen);
        }
    }

    #[test]
    fn short_fen_defaults_clocks() {
        let b = BoardState::from_fen("k7/8/8/8/8/8/8/K7 w").unwrap();
        assert_eq!(b.halfmove_clock(), 0);
        assert_eq!(b.fullmove_number(), 1);
    }

    #[test]
    fn malformed_fens_error() {
        for fen in ["", "8/8/8 w", "rnbqkbnr/pppppppp/9/8/8/8/PPPPPPPP/RNBQKBNR w", "k7/8/8/8/8/8/8/K7 x"] {
            assert!(BoardState::from_fen(fen).is_err(), "{fen}");
        }
    }
}
