//! Forward evaluation. Activations are channel-major `[C][64]` with cell `rank * 8 + file`.

use std::path::Path;

use ndarray::{ArrayView2, ArrayViewMut2};

use super::softmax;
use super::weights::{AgentConfig, Conv3x3, NetworkWeights};
use crate::chess::{encode_planes, HistoryStack, PlaneStack, PLANE_COUNT, POLICY_SIZE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AgentOutput {
    /// Empty when evaluated with [`Heads::Value`].
    pub policy_logits: Vec<f32>,
    /// Win, draw, loss for the side to move.
    pub wdl: [f32; 3],
    pub moves_left: f32,
}

/// Which heads to compute. The policy head dominates the cost of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Heads {
    All,
    Value,
}

/// Trunk activations after input convolution (layer 0) or residual block `layer`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub layer: usize,
    pub channels: usize,
    /// `[C][64]`, channel-major.
    pub data: Vec<f32>,
}

impl HiddenState {
    pub fn get(&self, channel: usize, cell: usize) -> f32 {
        self.data[channel * 64 + cell]
    }

    /// The C-dimensional activation vector at one square.
    pub fn at_square(&self, cell: usize) -> Vec<f32> {
        (0..self.channels).map(|c| self.data[c * 64 + cell]).collect()
    }
}

pub struct Agent {
    weights: NetworkWeights,
    /// Input weights reordered to `[plane][tap][out]` for the sparse scatter.
    input_t: Vec<f32>,
    digest: String,
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f32) -> f32 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

// Shifted cell for kernel tap (ky, kx), or None past the board edge.
fn neighbor(cell: usize, ky: usize, kx: usize) -> Option<usize> {
    let y = (cell / 8) as isize + ky as isize - 1;
    let x = (cell % 8) as isize + kx as isize - 1;
    ((0..8).contains(&y) && (0..8).contains(&x)).then(|| (y * 8 + x) as usize)
}

fn conv_gemm(conv: &Conv3x3, input: &[f32], cols: &mut [f32], out: &mut [f32]) {
    let cin = conv.in_channels;
    for i in 0..cin {
        let src = &input[i * 64..(i + 1) * 64];
        for k in 0..9 {
            let row = &mut cols[(i * 9 + k) * 64..(i * 9 + k + 1) * 64];
            for (cell, slot) in row.iter_mut().enumerate() {
                *slot = neighbor(cell, k / 3, k % 3).map_or(0.0, |n| src[n]);
            }
        }
    }
    let w = ArrayView2::from_shape((conv.out_channels, cin * 9), &conv.weight).expect("conv weight shape");
    let c = ArrayView2::from_shape((cin * 9, 64), &*cols).expect("im2col shape");
    let mut o = ArrayViewMut2::from_shape((conv.out_channels, 64), out).expect("output shape");
    ndarray::linalg::general_mat_mul(1.0, &w, &c, 0.0, &mut o);
    for (oc, b) in conv.bias.iter().enumerate() {
        for v in &mut out[oc * 64..(oc + 1) * 64] {
            *v += b;
        }
    }
}

fn pool(x: &[f32], channels: usize) -> Vec<f32> {
    (0..channels).map(|c| x[c * 64..(c + 1) * 64].iter().sum::<f32>() / 64.0).collect()
}

impl Agent {
    pub fn new(weights: NetworkWeights) -> Agent {
        let c = weights.config.channels;
        let mut input_t = vec![0.0; PLANE_COUNT * 9 * c];
        for o in 0..c {
            for i in 0..PLANE_COUNT {
                for k in 0..9 {
                    input_t[(i * 9 + k) * c + o] = weights.input.w(o, i, k / 3, k % 3);
                }
            }
        }
        let digest = weights.digest();
        Agent { weights, input_t, digest }
    }

    pub fn seeded(config: &AgentConfig, seed: u64) -> Result<Agent> {
        Ok(Agent::new(NetworkWeights::seeded_init(config, seed)?))
    }

    pub fn load(path: &Path, config: &AgentConfig) -> Result<Agent> {
        Ok(Agent::new(NetworkWeights::load(path, Some(config))?))
    }

    pub fn weights(&self) -> &NetworkWeights {
        &self.weights
    }

    pub fn config(&self) -> &AgentConfig {
        &self.weights.config
    }

    pub fn channels(&self) -> usize {
        self.weights.config.channels
    }

    pub fn blocks(&self) -> usize {
        self.weights.config.blocks
    }

    /// SHA-256 of the weight file bytes.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn forward(&self, planes: &PlaneStack, taps: &[usize]) -> Result<(AgentOutput, Vec<HiddenState>)> {
        self.forward_with(planes.as_slice(), taps, Heads::All)
    }

    /// Forward pass over a raw plane buffer, which must hold 112 x 64 values.
    pub fn forward_with(&self, planes: &[f32], taps: &[usize], heads: Heads) -> Result<(AgentOutput, Vec<HiddenState>)> {
        if planes.len() != PLANE_COUNT * 64 {
            return Err(Error::ShapeMismatch(format!(
                "plane buffer has {} values, expected {}",
                planes.len(),
                PLANE_COUNT * 64
            )));
        }
        if let Some(&t) = taps.iter().find(|&&t| t > self.blocks()) {
            return Err(Error::InvalidInput(format!("tap {t} outside 0..={}", self.blocks())));
        }
        let c = self.channels();
        let mut hidden = Vec::with_capacity(taps.len());
        let mut x = self.input_conv(planes);
        if taps.contains(&0) {
            hidden.push(HiddenState { layer: 0, channels: c, data: x.clone() });
        }

        let mut cols = vec![0.0; c * 9 * 64];
        let mut t = vec![0.0; c * 64];
        let mut u = vec![0.0; c * 64];
        let se_width = self.weights.config.se_width();
        let mut squeezed = vec![0.0; se_width];
        let mut gate = vec![0.0; c];
        for (bi, block) in self.weights.blocks.iter().enumerate() {
            conv_gemm(&block.conv1, &x, &mut cols, &mut t);
            t.iter_mut().for_each(|v| *v = v.max(0.0));
            conv_gemm(&block.conv2, &t, &mut cols, &mut u);
            let pooled = pool(&u, c);
            block.se_reduce.apply(&pooled, &mut squeezed);
            squeezed.iter_mut().for_each(|v| *v = v.max(0.0));
            block.se_expand.apply(&squeezed, &mut gate);
            for ch in 0..c {
                let g = sigmoid(gate[ch]);
                for cell in 0..64 {
                    let i = ch * 64 + cell;
                    x[i] = (x[i] + u[i] * g).max(0.0);
                }
            }
            if taps.contains(&(bi + 1)) {
                hidden.push(HiddenState { layer: bi + 1, channels: c, data: x.clone() });
            }
        }
        hidden.sort_by_key(|h| h.layer);

        let pooled = pool(&x, c);
        let mut wdl_logits = [0.0; 3];
        self.weights.wdl.apply(&pooled, &mut wdl_logits);
        let p = softmax(&wdl_logits);
        let mut ml = [0.0];
        self.weights.moves_left.apply(&pooled, &mut ml);
        let policy_logits = match heads {
            Heads::All => {
                let mut logits = vec![0.0; POLICY_SIZE];
                self.weights.policy.apply(&x, &mut logits);
                logits
            }
            Heads::Value => Vec::new(),
        };
        Ok((AgentOutput { policy_logits, wdl: [p[0], p[1], p[2]], moves_left: softplus(ml[0]) }, hidden))
    }

    fn input_conv(&self, planes: &[f32]) -> Vec<f32> {
        let c = self.channels();
        let mut out = vec![0.0; c * 64];
        for (ch, b) in self.weights.input.bias.iter().enumerate() {
            out[ch * 64..(ch + 1) * 64].fill(*b);
        }
        // Scatter each nonzero input cell into its neighbours; the input is mostly zeros.
        for i in 0..PLANE_COUNT {
            for cell in 0..64 {
                let v = planes[i * 64 + cell];
                if v == 0.0 {
                    continue;
                }
                for k in 0..9 {
                    // Output cell o reads input o + (k - 4) offset, so input cell feeds o = cell - offset.
                    let Some(o) = neighbor(cell, 2 - k / 3, 2 - k % 3) else { continue };
                    let w = &self.input_t[(i * 9 + k) * c..(i * 9 + k + 1) * c];
                    for ch in 0..c {
                        out[ch * 64 + o] += v * w[ch];
                    }
                }
            }
        }
        out.iter_mut().for_each(|v| *v = v.max(0.0));
        out
    }

    pub fn evaluate(&self, history: &HistoryStack, heads: Heads) -> Result<AgentOutput> {
        let planes = encode_planes(history);
        Ok(self.forward_with(planes.as_slice(), &[], heads)?.0)
    }

    /// Evaluates many inputs, fanning out across threads when the `parallel` feature is on.
    /// Results come back in input order.
    pub fn forward_batch(
        &self,
        inputs: &[PlaneStack],
        taps: &[usize],
        heads: Heads,
    ) -> Result<Vec<(AgentOutput, Vec<HiddenState>)>> {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            inputs.par_iter().map(|p| self.forward_with(p.as_slice(), taps, heads)).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            inputs.iter().map(|p| self.forward_with(p.as_slice(), taps, heads)).collect()
        }
    }
}
