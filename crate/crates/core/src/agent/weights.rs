//! Network parameters and the `PLNW` weight file.
//!
//! File layout, all little-endian:
//!
//! ```text
//! "PLNW" | u32 version | u32 channels | u32 blocks
//! then each array as u32 length + f32 values, in this order:
//!   input.weight, input.bias,
//!   per block: conv1.weight, conv1.bias, conv2.weight, conv2.bias,
//!              se_reduce.weight, se_reduce.bias, se_expand.weight, se_expand.bias,
//!   policy.weight, policy.bias, wdl.weight, wdl.bias, moves_left.weight, moves_left.bias
//! ```
//!
//! Convolution weights are `[out][in][3][3]`, dense weights `[out][in]`.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::chess::{PieceKind, PLANE_COUNT, POLICY_SIZE};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PLNW";
const VERSION: u32 = 1;

/// Per-square piece values are divided by this in the material channels.
pub(crate) const MATERIAL_SCALE: f32 = 10.0;
/// Win/loss logit per pawn of material difference.
const MATERIAL_LOGIT_PER_PAWN: f32 = 0.5;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AgentConfig {
    /// Trunk width C.
    pub channels: usize,
    /// Number of SE-residual blocks N.
    pub blocks: usize,
    /// Reserve trunk channels 0 and 1 for own/opponent material.
    pub material_prior: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig { channels: 32, blocks: 4, material_prior: true }
    }
}

impl AgentConfig {
    pub fn se_width(&self) -> usize {
        (self.channels / 4).max(1)
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::InvalidInput("agent needs at least one channel".into()));
        }
        if self.material_prior && self.channels < 3 {
            return Err(Error::InvalidInput("material prior needs at least 3 channels".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3 {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv3x3 {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Conv3x3 {
        Conv3x3 {
            in_channels,
            out_channels,
            weight: vec![0.0; out_channels * in_channels * 9],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn w(&self, out: usize, input: usize, ky: usize, kx: usize) -> f32 {
        self.weight[((out * self.in_channels + input) * 3 + ky) * 3 + kx]
    }

    fn w_mut(&mut self, out: usize, input: usize, ky: usize, kx: usize) -> &mut f32 {
        &mut self.weight[((out * self.in_channels + input) * 3 + ky) * 3 + kx]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Dense {
        Dense { inputs, outputs, weight: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    pub fn apply(&self, x: &[f32], out: &mut [f32]) {
        out.copy_from_slice(&self.bias);
        let w = ndarray::ArrayView2::from_shape((self.outputs, self.inputs), &self.weight).expect("dense weight shape");
        let x = ndarray::ArrayView1::from(x);
        let mut y = ndarray::ArrayViewMut1::from(out);
        ndarray::linalg::general_mat_vec_mul(1.0, &w, &x, 1.0, &mut y);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeBlock {
    pub conv1: Conv3x3,
    pub conv2: Conv3x3,
    pub se_reduce: Dense,
    pub se_expand: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub config: AgentConfig,
    pub input: Conv3x3,
    pub blocks: Vec<SeBlock>,
    pub policy: Dense,
    pub wdl: Dense,
    pub moves_left: Dense,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn normal(&mut self, std: f32) -> f32 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        z as f32 * std
    }

    fn fill(&mut self, v: &mut [f32], std: f32) {
        for x in v {
            *x = self.normal(std);
        }
    }
}

impl NetworkWeights {
    /// Reproducible initialization: ChaCha8 seeded with `seed`, standard normals via
    /// `rand_distr`, arrays filled in file order.
    pub fn seeded_init(config: &AgentConfig, seed: u64) -> Result<NetworkWeights> {
        config.validate()?;
        let c = config.channels;
        let se = config.se_width();
        let mut init = Init { rng: ChaCha8Rng::seed_from_u64(seed) };

        let mut input = Conv3x3::zeros(PLANE_COUNT, c);
        init.fill(&mut input.weight, (2.0 / (PLANE_COUNT as f32 * 9.0)).sqrt() * 3.0);
        init.fill(&mut input.bias, 0.01);

        let conv_std = (2.0 / (c as f32 * 9.0)).sqrt();
        let mut blocks = Vec::with_capacity(config.blocks);
        for _ in 0..config.blocks {
            let mut conv1 = Conv3x3::zeros(c, c);
            init.fill(&mut conv1.weight, conv_std);
            init.fill(&mut conv1.bias, 0.01);
            let mut conv2 = Conv3x3::zeros(c, c);
            init.fill(&mut conv2.weight, conv_std * 0.5);
            init.fill(&mut conv2.bias, 0.01);
            let mut se_reduce = Dense::zeros(c, se);
            init.fill(&mut se_reduce.weight, (2.0 / c as f32).sqrt());
            init.fill(&mut se_reduce.bias, 0.01);
            let mut se_expand = Dense::zeros(se, c);
            init.fill(&mut se_expand.weight, (1.0 / se as f32).sqrt());
            init.fill(&mut se_expand.bias, 0.01);
            blocks.push(SeBlock { conv1, conv2, se_reduce, se_expand });
        }

        let mut policy = Dense::zeros(c * 64, POLICY_SIZE);
        init.fill(&mut policy.weight, (1.0 / (c as f32 * 64.0)).sqrt());
        let mut wdl = Dense::zeros(c, 3);
        init.fill(&mut wdl.weight, 0.1 / (c as f32).sqrt());
        let mut moves_left = Dense::zeros(c, 1);
        init.fill(&mut moves_left.weight, 0.1 / (c as f32).sqrt());
        moves_left.bias[0] = 40.0;

        let mut w = NetworkWeights { config: config.clone(), input, blocks, policy, wdl, moves_left };
        if config.material_prior {
            w.install_material_prior();
        }
        Ok(w)
    }

    /// Channels 0/1 hold own/opponent piece values per square, pass unchanged
    /// through every residual block, and drive the win/loss logits.
    fn install_material_prior(&mut self) {
        for ch in 0..2 {
            for i in 0..PLANE_COUNT {
                for ky in 0..3 {
                    for kx in 0..3 {
                        *self.input.w_mut(ch, i, ky, kx) = 0.0;
                    }
                }
            }
            self.input.bias[ch] = 0.0;
            for kind in PieceKind::ALL {
                let plane = ch * 6 + kind.index();
                *self.input.w_mut(ch, plane, 1, 1) = kind.value() / MATERIAL_SCALE;
            }
            for block in &mut self.blocks {
                let c = block.conv2.in_channels;
                for i in 0..c {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            *block.conv2.w_mut(ch, i, ky, kx) = 0.0;
                        }
                    }
                }
                block.conv2.bias[ch] = 0.0;
            }
        }
        // Pooled channel value = material / (64 * scale).
        let per_pawn = MATERIAL_LOGIT_PER_PAWN * 64.0 * MATERIAL_SCALE;
        let c = self.config.channels;
        self.wdl.weight[0] = per_pawn;
        self.wdl.weight[1] = -per_pawn;
        self.wdl.weight[2 * c] = -per_pawn;
        self.wdl.weight[2 * c + 1] = per_pawn;
        for ch in 0..2 {
            self.wdl.weight[c + ch] = 0.0;
            // Fewer pieces, shorter game.
            self.moves_left.weight[ch] = 0.5 * 64.0 * MATERIAL_SCALE;
        }
        self.moves_left.bias[0] = 5.0;
    }

    fn arrays(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = vec![&self.input.weight, &self.input.bias];
        for b in &self.blocks {
            out.extend([
                &b.conv1.weight[..],
                &b.conv1.bias,
                &b.conv2.weight,
                &b.conv2.bias,
                &b.se_reduce.weight,
                &b.se_reduce.bias,
                &b.se_expand.weight,
                &b.se_expand.bias,
            ]);
        }
        out.extend([
            &self.policy.weight[..],
            &self.policy.bias,
            &self.wdl.weight,
            &self.wdl.bias,
            &self.moves_left.weight,
            &self.moves_left.bias,
        ]);
        out
    }

    fn arrays_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out: Vec<&mut Vec<f32>> = vec![&mut self.input.weight, &mut self.input.bias];
        for b in &mut self.blocks {
            out.extend([
                &mut b.conv1.weight,
                &mut b.conv1.bias,
                &mut b.conv2.weight,
                &mut b.conv2.bias,
                &mut b.se_reduce.weight,
                &mut b.se_reduce.bias,
                &mut b.se_expand.weight,
                &mut b.se_expand.bias,
            ]);
        }
        out.extend([
            &mut self.policy.weight,
            &mut self.policy.bias,
            &mut self.wdl.weight,
            &mut self.wdl.bias,
            &mut self.moves_left.weight,
            &mut self.moves_left.bias,
        ]);
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.channels as u32).to_le_bytes());
        out.extend_from_slice(&(self.config.blocks as u32).to_le_bytes());
        for arr in self.arrays() {
            out.extend_from_slice(&(arr.len() as u32).to_le_bytes());
            for v in arr {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a weight file; `expected` pins C and N when given.
    pub fn from_bytes(bytes: &[u8], expected: Option<&AgentConfig>, path: &Path) -> Result<NetworkWeights> {
        let corrupt = |reason: &str| Error::CorruptFile { path: path.to_path_buf(), reason: reason.to_string() };
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(corrupt("unexpected end of file"));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(4)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let version = u32_at(take(4)?);
        if version != VERSION {
            return Err(Error::VersionMismatch { found: version, expected: VERSION });
        }
        let channels = u32_at(take(4)?) as usize;
        let blocks = u32_at(take(4)?) as usize;
        if let Some(exp) = expected {
            if exp.channels != channels || exp.blocks != blocks {
                return Err(Error::ShapeMismatch(format!(
                    "weights have C={channels}, N={blocks}; config expects C={}, N={}",
                    exp.channels, exp.blocks
                )));
            }
        }
        let config = AgentConfig {
            channels,
            blocks,
            material_prior: expected.map(|e| e.material_prior).unwrap_or(false),
        };
        if channels == 0 || channels > 4096 || blocks > 256 {
            return Err(corrupt("implausible dimensions"));
        }
        let mut w = NetworkWeights::zeros(&config);
        for arr in w.arrays_mut() {
            let len = u32_at(take(4)?) as usize;
            if len != arr.len() {
                return Err(Error::ShapeMismatch(format!("array of length {len}, expected {}", arr.len())));
            }
            let raw = take(len * 4)?;
            for (dst, chunk) in arr.iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
        }
        if !cur.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(w)
    }

    fn zeros(config: &AgentConfig) -> NetworkWeights {
        let c = config.channels;
        let se = config.se_width();
        NetworkWeights {
            config: config.clone(),
            input: Conv3x3::zeros(PLANE_COUNT, c),
            blocks: (0..config.blocks)
                .map(|_| SeBlock {
                    conv1: Conv3x3::zeros(c, c),
                    conv2: Conv3x3::zeros(c, c),
                    se_reduce: Dense::zeros(c, se),
                    se_expand: Dense::zeros(se, c),
                })
                .collect(),
            policy: Dense::zeros(c * 64, POLICY_SIZE),
            wdl: Dense::zeros(c, 3),
            moves_left: Dense::zeros(c, 1),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path, expected: Option<&AgentConfig>) -> Result<NetworkWeights> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        NetworkWeights::from_bytes(&bytes, expected, path)
    }

    /// SHA-256 of the serialized weights.
    pub fn digest(&self) -> String {
        sha256_hex(&self.to_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> AgentConfig {
        AgentConfig { channels: 4, blocks: 1, material_prior: true }
    }

    #[test]
    fn same_seed_same_checksum() {
        let a = NetworkWeights::seeded_init(&tiny(), 9).unwrap();
        let b = NetworkWeights::seeded_init(&tiny(), 9).unwrap();
        let c = NetworkWeights::seeded_init(&tiny(), 10).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn save_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.plnw");
        let w = NetworkWeights::seeded_init(&tiny(), 1).unwrap();
        w.save(&path).unwrap();
        let back = NetworkWeights::load(&path, Some(&tiny())).unwrap();
        assert_eq!(back.to_bytes(), w.to_bytes());
        assert_eq!(back, w);
    }

    #[test]
    fn mismatched_channels_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.plnw");
        NetworkWeights::seeded_init(&tiny(), 1).unwrap().save(&path).unwrap();
        let other = AgentConfig { channels: 8, ..tiny() };
        assert!(matches!(NetworkWeights::load(&path, Some(&other)), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn corrupt_files_rejected() {
        let w = NetworkWeights::seeded_init(&tiny(), 1).unwrap();
        let bytes = w.to_bytes();
        let p = Path::new("mem");
        assert!(matches!(NetworkWeights::from_bytes(&bytes[..bytes.len() - 3], None, p), Err(Error::CorruptFile { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(NetworkWeights::from_bytes(&bad, None, p), Err(Error::CorruptFile { .. })));
    }
}
