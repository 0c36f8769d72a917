//! The `CSAP` activation-pair file.
//!
//! ```text
//! "CSAP" | u32 version | u32 C | u32 T
//! records: u64 root_id | u64 traj_id | u8 depth | u8 square | u8 flag | 2C x f32
//! u32 CRC32 of every preceding byte
//! ```
//!
//! All integers and floats are little-endian. `flag` is 0 for optimal, 1 for suboptimal.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::Optimality;

pub const PAIR_MAGIC: &[u8; 4] = b"CSAP";
pub const PAIR_VERSION: u32 = 1;
const HEADER_LEN: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RecordMeta {
    pub root_id: u64,
    pub traj_id: u64,
    /// 1..=T.
    pub depth: u8,
    pub square: u8,
    pub flag: Optimality,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationPairRecord {
    pub meta: RecordMeta,
    pub h_root: Vec<f32>,
    pub h_traj: Vec<f32>,
}

impl ActivationPairRecord {
    /// `[h_root; h_traj]`.
    pub fn concat(&self) -> Vec<f32> {
        let mut v = self.h_root.clone();
        v.extend_from_slice(&self.h_traj);
        v
    }
}

pub fn record_len(channels: usize) -> usize {
    19 + 8 * channels
}

/// Trajectory ids pack the root id and the trajectory index (0 optimal, j suboptimal).
pub fn traj_id(root_id: u64, index: u32) -> u64 {
    (root_id << 8) | u64::from(index & 0xff)
}

pub fn traj_index(traj_id: u64) -> u32 {
    (traj_id & 0xff) as u32
}

pub struct PairWriter {
    out: BufWriter<File>,
    crc: crc32fast::Hasher,
    channels: usize,
    count: u64,
}

impl PairWriter {
    pub fn create(path: &Path, channels: usize, depth: usize) -> Result<PairWriter> {
        let mut w = PairWriter { out: BufWriter::new(File::create(path)?), crc: crc32fast::Hasher::new(), channels, count: 0 };
        let mut header = Vec::with_capacity(HEADER_LEN as usize);
        header.extend_from_slice(PAIR_MAGIC);
        header.extend_from_slice(&PAIR_VERSION.to_le_bytes());
        header.extend_from_slice(&(channels as u32).to_le_bytes());
        header.extend_from_slice(&(depth as u32).to_le_bytes());
        w.put(&header)?;
        Ok(w)
    }

    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.crc.update(bytes);
        self.out.write_all(bytes)?;
        Ok(())
    }

    pub fn write(&mut self, meta: &RecordMeta, h_root: &[f32], h_traj: &[f32]) -> Result<()> {
        if h_root.len() != self.channels || h_traj.len() != self.channels {
            return Err(Error::ShapeMismatch(format!(
                "record vectors of length {}/{}, file width {}",
                h_root.len(),
                h_traj.len(),
                self.channels
            )));
        }
        let mut buf = Vec::with_capacity(record_len(self.channels));
        buf.extend_from_slice(&meta.root_id.to_le_bytes());
        buf.extend_from_slice(&meta.traj_id.to_le_bytes());
        buf.push(meta.depth);
        buf.push(meta.square);
        buf.push(match meta.flag {
            Optimality::Optimal => 0,
            Optimality::Suboptimal => 1,
        });
        for v in h_root.iter().chain(h_traj) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.put(&buf)?;
        self.count += 1;
        Ok(())
    }

    /// Appends the checksum and flushes; returns the record count.
    pub fn finish(mut self) -> Result<u64> {
        let crc = self.crc.clone().finalize();
        self.out.write_all(&crc.to_le_bytes())?;
        self.out.flush()?;
        Ok(self.count)
    }
}

/// Streaming reader. The checksum is verified when the last record has been read; a
/// mismatch surfaces as a final `Err` item.
pub struct PairReader {
    input: BufReader<File>,
    path: PathBuf,
    crc: crc32fast::Hasher,
    channels: usize,
    depth: usize,
    remaining: u64,
    done: bool,
}

impl PairReader {
    pub fn open(path: &Path) -> Result<PairReader> {
        let file = File::open(path)?;
        let len = file.metadata()?.len();
        let mut input = BufReader::new(file);
        let mut header = [0u8; HEADER_LEN as usize];
        input.read_exact(&mut header).map_err(|_| Error::ChecksumMismatch(path.to_path_buf()))?;
        if &header[..4] != PAIR_MAGIC {
            return Err(Error::CorruptFile { path: path.to_path_buf(), reason: "bad magic".into() });
        }
        let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != PAIR_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: PAIR_VERSION });
        }
        let channels = u32_at(8) as usize;
        let depth = u32_at(12) as usize;
        let rec = record_len(channels) as u64;
        let body = len.checked_sub(HEADER_LEN + 4).ok_or_else(|| Error::ChecksumMismatch(path.to_path_buf()))?;
        if body % rec != 0 {
            return Err(Error::ChecksumMismatch(path.to_path_buf()));
        }
        let mut crc = crc32fast::Hasher::new();
        crc.update(&header);
        Ok(PairReader { input, path: path.to_path_buf(), crc, channels, depth, remaining: body / rec, done: false })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Records left to read.
    pub fn remaining(&self) -> u64 {
        self.remaining
    }

    fn read_record(&mut self) -> Result<ActivationPairRecord> {
        let mut buf = vec![0u8; record_len(self.channels)];
        self.input.read_exact(&mut buf)?;
        self.crc.update(&buf);
        let u64_at = |i: usize| u64::from_le_bytes(buf[i..i + 8].try_into().expect("8 bytes"));
        let flag = match buf[18] {
            0 => Optimality::Optimal,
            1 => Optimality::Suboptimal,
            f => return Err(Error::CorruptFile { path: self.path.clone(), reason: format!("bad flag {f}") }),
        };
        let meta = RecordMeta { root_id: u64_at(0), traj_id: u64_at(8), depth: buf[16], square: buf[17], flag };
        let floats: Vec<f32> =
            buf[19..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let (a, b) = floats.split_at(self.channels);
        Ok(ActivationPairRecord { meta, h_root: a.to_vec(), h_traj: b.to_vec() })
    }

    fn verify(&mut self) -> Result<()> {
        let mut tail = [0u8; 4];
        self.input.read_exact(&mut tail).map_err(|_| Error::ChecksumMismatch(self.path.clone()))?;
        if u32::from_le_bytes(tail) != self.crc.clone().finalize() {
            return Err(Error::ChecksumMismatch(self.path.clone()));
        }
        Ok(())
    }
}

impl Iterator for PairReader {
    type Item = Result<ActivationPairRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if self.remaining == 0 {
            self.done = true;
            return self.verify().err().map(Err);
        }
        self.remaining -= 1;
        let r = self.read_record();
        if r.is_err() {
            self.done = true;
        }
        Some(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(i: u64) -> ActivationPairRecord {
        ActivationPairRecord {
            meta: RecordMeta {
                root_id: i,
                traj_id: traj_id(i, (i % 2) as u32),
                depth: 1 + (i % 3) as u8,
                square: (i % 64) as u8,
                flag: if i % 2 == 0 { Optimality::Optimal } else { Optimality::Suboptimal },
            },
            h_root: vec![i as f32, -1.5],
            h_traj: vec![0.25, f32::MIN_POSITIVE],
        }
    }

    fn write_file(path: &Path, n: u64) {
        let mut w = PairWriter::create(path, 2, 3).unwrap();
        for i in 0..n {
            let r = sample(i);
            w.write(&r.meta, &r.h_root, &r.h_traj).unwrap();
        }
        assert_eq!(w.finish().unwrap(), n);
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csap");
        write_file(&path, 10);
        let reader = PairReader::open(&path).unwrap();
        assert_eq!((reader.channels(), reader.depth(), reader.remaining()), (2, 3, 10));
        let back: Vec<ActivationPairRecord> = reader.collect::<Result<_>>().unwrap();
        assert_eq!(back, (0..10).map(sample).collect::<Vec<_>>());
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 16 + 10 * record_len(2) as u64 + 4);
    }

    #[test]
    fn truncation_and_corruption_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csap");
        write_file(&path, 5);
        let bytes = std::fs::read(&path).unwrap();

        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(PairReader::open(&path), Err(Error::ChecksumMismatch(_))));

        // Drop one whole record but keep the trailer: sizes line up, the checksum does not.
        let cut = bytes.len() - 4 - record_len(2);
        std::fs::write(&path, [&bytes[..cut], &bytes[bytes.len() - 4..]].concat()).unwrap();
        let res: Result<Vec<_>> = PairReader::open(&path).unwrap().collect();
        assert!(matches!(res, Err(Error::ChecksumMismatch(_))));

        let mut flipped = bytes.clone();
        flipped[30] ^= 1;
        std::fs::write(&path, &flipped).unwrap();
        let res: Result<Vec<_>> = PairReader::open(&path).unwrap().collect();
        assert!(matches!(res, Err(Error::ChecksumMismatch(_))));

        let mut v = bytes.clone();
        v[4] = 9;
        std::fs::write(&path, &v).unwrap();
        assert!(matches!(PairReader::open(&path), Err(Error::VersionMismatch { found: 9, .. })));
    }

    #[test]
    fn traj_ids_pack_root_and_index() {
        assert_eq!(traj_index(traj_id(12345, 3)), 3);
        assert_eq!(traj_id(12345, 3) >> 8, 12345);
    }
}
