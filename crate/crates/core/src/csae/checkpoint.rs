//! The `CSAE` checkpoint file.
//!
//! ```text
//! "CSAE" | u32 version | u32 2C | u32 n_f | u32 n_c
//! f64 x 4 loss weights (sparse, contrast, aux, probe)
//! u32 len | dataset digest (UTF-8)
//! f32 arrays: W_e (n_f x 2C, row-major) | b_e | W_d (2C x n_f, row-major) | b_d | probe w | probe b
//! u32 CRC32 of every preceding byte
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};

use super::{CsaeParams, LossWeights, ProbeParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CSAE";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: CsaeParams<f32>,
    pub probe: ProbeParams<f32>,
    pub weights: LossWeights,
    /// Digest of the dataset manifest the model was trained on; empty if unknown.
    pub dataset_digest: String,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CorruptFile { path: self.path.to_path_buf(), reason: "truncated".into() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self.take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [CHECKPOINT_VERSION, p.dim() as u32, p.n_f() as u32, p.n_c() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let w = &self.weights;
        for v in [w.lambda_sparse, w.lambda_contrast, w.lambda_aux, w.lambda_probe] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.dataset_digest.len() as u32).to_le_bytes());
        out.extend_from_slice(self.dataset_digest.as_bytes());
        let arrays = p.w_e.iter().chain(&p.b_e).chain(&p.w_d).chain(&p.b_d).chain(&self.probe.w);
        for v in arrays.chain(std::iter::once(&self.probe.b)) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parses a checkpoint; `expected_dim` rejects models of the wrong input width.
    pub fn from_bytes(bytes: &[u8], expected_dim: Option<usize>, path: &Path) -> Result<Checkpoint> {
        let corrupt = |r: &str| Error::CorruptFile { path: path.to_path_buf(), reason: r.to_string() };
        if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let mut c = Cursor { bytes: body, pos: 4, path };
        let version = c.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
        }
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
            return Err(Error::ChecksumMismatch(path.to_path_buf()));
        }
        let (dim, n_f, n_c) = (c.u32()? as usize, c.u32()? as usize, c.u32()? as usize);
        if let Some(want) = expected_dim {
            if want != dim {
                return Err(Error::ShapeMismatch(format!("checkpoint has input width {dim}, expected {want}")));
            }
        }
        if n_c > n_f {
            return Err(corrupt("n_c exceeds n_f"));
        }
        let weights = LossWeights { lambda_sparse: c.f64()?, lambda_contrast: c.f64()?, lambda_aux: c.f64()?, lambda_probe: c.f64()? };
        let len = c.u32()? as usize;
        let dataset_digest = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| corrupt("digest is not UTF-8"))?;
        let shape = |v: Vec<f32>, r: usize, k: usize| Array2::from_shape_vec((r, k), v).expect("sized read");
        let w_e = shape(c.f32s(n_f * dim)?, n_f, dim);
        let b_e = Array1::from(c.f32s(n_f)?);
        let w_d = shape(c.f32s(dim * n_f)?, dim, n_f);
        let b_d = Array1::from(c.f32s(dim)?);
        let w = Array1::from(c.f32s(n_f - n_c)?);
        let b = c.f32s(1)?[0];
        if c.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        let params = CsaeParams::from_parts(w_e, b_e, w_d, b_d, n_c)?;
        Ok(Checkpoint { params, probe: ProbeParams { w, b }, weights, dataset_digest })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path, expected_dim: Option<usize>) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&std::fs::read(path)?, expected_dim, path)
    }

    /// False, with a logged warning, when the checkpoint was trained on a different dataset.
    pub fn matches_dataset(&self, manifest_digest: &str) -> bool {
        let ok = self.dataset_digest.is_empty() || self.dataset_digest == manifest_digest;
        if !ok {
            log::warn!(
                "checkpoint was trained on dataset {} but is evaluated against {}",
                self.dataset_digest,
                manifest_digest
            );
        }
        ok
    }
}
