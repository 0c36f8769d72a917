//! Contrastive sparse autoencoder.
//!
//! Inputs are concatenated `[h_root; h_traj]` vectors of length `2C`. The dictionary has
//! `n_f = n_c + n_d` features: the first `n_c` are common (c) features, the rest are
//! differentiating (d) features. With `n_c = 0`, zero contrastive weights and single-row
//! batches the same code trains an ordinary SAE on vectors of any width.

mod checkpoint;
mod grad;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use grad::{loss_and_gradients_masked, total_loss_and_gradients, Batch, Gradients, LossBreakdown, TermMask};
pub use train::{evaluate, train, train_with, Adam, Evaluation, LogRow, TrainConfig, TrainData, TrainOutcome, TrainingLog};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, NdFloat};
use num_traits::NumCast;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) fn cast<A: NdFloat>(x: f64) -> A {
    <A as NumCast>::from(x).expect("float cast")
}

pub(crate) fn to_f64<A: NdFloat>(x: A) -> f64 {
    <f64 as NumCast>::from(x).expect("float cast")
}

/// Clamp applied to probe probabilities before taking logs.
pub const PROBE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct CsaeParams<A = f32> {
    /// `n_f × 2C`.
    pub w_e: Array2<A>,
    pub b_e: Array1<A>,
    /// `2C × n_f`.
    pub w_d: Array2<A>,
    pub b_d: Array1<A>,
    n_c: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeParams<A = f32> {
    pub w: Array1<A>,
    pub b: A,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_sparse: f64,
    pub lambda_contrast: f64,
    pub lambda_aux: f64,
    pub lambda_probe: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_sparse: 5e-3, lambda_contrast: 0.1, lambda_aux: 1.0, lambda_probe: 0.1 }
    }
}

impl LossWeights {
    /// Reconstruction and sparsity only.
    pub fn plain(lambda_sparse: f64) -> LossWeights {
        LossWeights { lambda_sparse, lambda_contrast: 0.0, lambda_aux: 0.0, lambda_probe: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_sparse, self.lambda_contrast, self.lambda_aux, self.lambda_probe];
        if all.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidInput(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Encoder output split into its partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Features<A = f32> {
    pub f: Array1<A>,
    n_c: usize,
}

impl<A: NdFloat> Features<A> {
    pub fn c(&self) -> ArrayView1<'_, A> {
        self.f.slice(s![..self.n_c])
    }

    pub fn d(&self) -> ArrayView1<'_, A> {
        self.f.slice(s![self.n_c..])
    }
}

impl<A: NdFloat> CsaeParams<A> {
    /// Unit-norm random encoder rows, decoder tied to the encoder transpose, zero biases.
    pub fn init(dim: usize, n_f: usize, n_c: usize, seed: u64) -> Result<CsaeParams<A>> {
        if dim == 0 || n_f == 0 || n_c > n_f {
            return Err(Error::InvalidInput(format!("bad CSAE sizes: dim {dim}, n_f {n_f}, n_c {n_c}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w_e = Array2::<A>::zeros((n_f, dim));
        for mut row in w_e.rows_mut() {
            for x in row.iter_mut() {
                let v: f64 = StandardNormal.sample(&mut rng);
                *x = cast(v);
            }
            let n = row.dot(&row).sqrt();
            row.mapv_inplace(|x| x / n);
        }
        let w_d = w_e.t().to_owned();
        Ok(CsaeParams { w_e, b_e: Array1::zeros(n_f), w_d, b_d: Array1::zeros(dim), n_c })
    }

    pub fn from_parts(w_e: Array2<A>, b_e: Array1<A>, w_d: Array2<A>, b_d: Array1<A>, n_c: usize) -> Result<Self> {
        let (n_f, dim) = w_e.dim();
        if b_e.len() != n_f || w_d.dim() != (dim, n_f) || b_d.len() != dim || n_c > n_f {
            return Err(Error::ShapeMismatch(format!(
                "W_e {:?}, b_e {}, W_d {:?}, b_d {}, n_c {n_c}",
                w_e.dim(),
                b_e.len(),
                w_d.dim(),
                b_d.len()
            )));
        }
        Ok(CsaeParams { w_e, b_e, w_d, b_d, n_c })
    }

    /// Input width `2C`.
    pub fn dim(&self) -> usize {
        self.w_e.ncols()
    }

    /// `C`, the width of the root half.
    pub fn channels(&self) -> usize {
        self.dim() / 2
    }

    pub fn n_f(&self) -> usize {
        self.w_e.nrows()
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn n_d(&self) -> usize {
        self.n_f() - self.n_c
    }

    pub fn cast<B: NdFloat>(&self) -> CsaeParams<B> {
        let c = |x: &A| cast::<B>(to_f64(*x));
        CsaeParams { w_e: self.w_e.map(c), b_e: self.b_e.map(c), w_d: self.w_d.map(c), b_d: self.b_d.map(c), n_c: self.n_c }
    }

    fn check_len(&self, what: &str, got: usize, want: usize) -> Result<()> {
        if got != want {
            return Err(Error::ShapeMismatch(format!("{what} has length {got}, expected {want}")));
        }
        Ok(())
    }

    pub fn encode(&self, h: ArrayView1<'_, A>) -> Result<Features<A>> {
        self.check_len("input", h.len(), self.dim())?;
        let z = self.w_e.dot(&h) + &self.b_e;
        Ok(Features { f: z.mapv(|x| x.max(A::zero())), n_c: self.n_c })
    }

    pub fn decode(&self, f: ArrayView1<'_, A>) -> Result<Array1<A>> {
        self.check_len("feature vector", f.len(), self.n_f())?;
        Ok(self.w_d.dot(&f) + &self.b_d)
    }

    /// `W_d[0:C, 0:n_c]·c + b_d[0:C]`.
    pub fn decode_root(&self, c: ArrayView1<'_, A>) -> Result<Array1<A>> {
        self.check_len("c vector", c.len(), self.n_c)?;
        let ch = self.channels();
        Ok(self.w_d.slice(s![..ch, ..self.n_c]).dot(&c) + &self.b_d.slice(s![..ch]))
    }

    /// Batched encode; rows of `h` are inputs.
    pub fn encode_batch(&self, h: ArrayView2<'_, A>) -> Result<Array2<A>> {
        self.check_len("input rows", h.ncols(), self.dim())?;
        let z = h.dot(&self.w_e.t()) + &self.b_e;
        Ok(z.mapv(|x| x.max(A::zero())))
    }

    pub fn decode_batch(&self, f: ArrayView2<'_, A>) -> Result<Array2<A>> {
        self.check_len("feature rows", f.ncols(), self.n_f())?;
        Ok(f.dot(&self.w_d.t()) + &self.b_d)
    }

    pub fn decode_root_batch(&self, c: ArrayView2<'_, A>) -> Result<Array2<A>> {
        self.check_len("c rows", c.ncols(), self.n_c)?;
        let ch = self.channels();
        Ok(c.dot(&self.w_d.slice(s![..ch, ..self.n_c]).t()) + &self.b_d.slice(s![..ch]))
    }

    /// `‖W_d[:, i]‖₂` for every feature.
    pub fn decoder_norms(&self) -> Array1<A> {
        self.w_d.map_axis(Axis(0), |col| col.dot(&col).sqrt())
    }

    /// `‖W_d[0:C, i]‖₂` for the c-features.
    pub fn root_decoder_norms(&self) -> Array1<A> {
        let ch = self.channels();
        self.w_d.slice(s![..ch, ..self.n_c]).map_axis(Axis(0), |col| col.dot(&col).sqrt())
    }
}

impl<A: NdFloat> ProbeParams<A> {
    pub fn zeros(n_d: usize) -> ProbeParams<A> {
        ProbeParams { w: Array1::zeros(n_d), b: A::zero() }
    }

    pub fn logit(&self, d: ArrayView1<'_, A>) -> A {
        self.w.dot(&d) + self.b
    }

    /// Clamped `sigmoid(w·d + b)`.
    pub fn prob(&self, d: ArrayView1<'_, A>) -> A {
        clamped_sigmoid(self.logit(d))
    }

    pub fn cast<B: NdFloat>(&self) -> ProbeParams<B> {
        ProbeParams { w: self.w.map(|x| cast::<B>(to_f64(*x))), b: cast(to_f64(self.b)) }
    }
}

pub(crate) fn sigmoid<A: NdFloat>(z: A) -> A {
    if z >= A::zero() {
        A::one() / (A::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (A::one() + e)
    }
}

pub(crate) fn clamped_sigmoid<A: NdFloat>(z: A) -> A {
    let eps = cast::<A>(PROBE_EPS);
    sigmoid(z).max(eps).min(A::one() - eps)
}

fn sq_dist<A: NdFloat>(a: ArrayView1<'_, A>, b: ArrayView1<'_, A>) -> A {
    a.iter().zip(b).fold(A::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

/// `‖h − ĥ‖² + λ Σ_i |f_i|·‖W_d[:, i]‖₂`.
pub fn loss_reconstruction_sparsity<A: NdFloat>(
    h: ArrayView1<'_, A>,
    h_hat: ArrayView1<'_, A>,
    f: ArrayView1<'_, A>,
    params: &CsaeParams<A>,
    lambda_sparse: A,
) -> A {
    let penalty = f.iter().zip(&params.decoder_norms()).fold(A::zero(), |acc, (&x, &n)| acc + x.abs() * n);
    sq_dist(h, h_hat) + lambda_sparse * penalty
}

/// Root-half counterpart of [`loss_reconstruction_sparsity`]: the reconstruction uses
/// [`CsaeParams::decode_root`] and the penalty the root-block column norms.
pub fn loss_root<A: NdFloat>(
    h_root: ArrayView1<'_, A>,
    root_hat: ArrayView1<'_, A>,
    c: ArrayView1<'_, A>,
    params: &CsaeParams<A>,
    lambda_sparse: A,
) -> A {
    let penalty = c.iter().zip(&params.root_decoder_norms()).fold(A::zero(), |acc, (&x, &n)| acc + x.abs() * n);
    sq_dist(h_root, root_hat) + lambda_sparse * penalty
}

/// `‖c⁺ − c⁻‖₁ + ‖d⁺ ⊙ d⁻‖₁`.
pub fn loss_contrast<A: NdFloat>(
    c_plus: ArrayView1<'_, A>,
    c_minus: ArrayView1<'_, A>,
    d_plus: ArrayView1<'_, A>,
    d_minus: ArrayView1<'_, A>,
) -> Result<A> {
    if c_plus.len() != c_minus.len() || d_plus.len() != d_minus.len() {
        return Err(Error::ShapeMismatch("contrast operands differ in length".into()));
    }
    let c = c_plus.iter().zip(&c_minus).fold(A::zero(), |acc, (&a, &b)| acc + (a - b).abs());
    let d = d_plus.iter().zip(&d_minus).fold(A::zero(), |acc, (&a, &b)| acc + (a * b).abs());
    Ok(c + d)
}

/// `−log P(d⁺) − log(1 − P(d⁻))` with the probability clamped to `[ε, 1−ε]`.
pub fn loss_probe<A: NdFloat>(d_plus: ArrayView1<'_, A>, d_minus: ArrayView1<'_, A>, probe: &ProbeParams<A>) -> A {
    -(probe.prob(d_plus).ln()) - (A::one() - probe.prob(d_minus)).ln()
}

/// Mean number of active features per row and the fraction of variance explained.
pub fn reconstruction_stats<A: NdFloat>(params: &CsaeParams<A>, rows: ArrayView2<'_, A>) -> Result<(f64, f64)> {
    let f = params.encode_batch(rows)?;
    let h_hat = params.decode_batch(f.view())?;
    let active = f.iter().filter(|&&x| x > A::zero()).count();
    let l0 = active as f64 / rows.nrows().max(1) as f64;
    Ok((l0, r_squared(rows, h_hat.view())))
}

/// `1 − Σ‖h − ĥ‖² / Σ‖h − mean(h)‖²`, pooled over all rows and dimensions.
pub fn r_squared<A: NdFloat>(h: ArrayView2<'_, A>, h_hat: ArrayView2<'_, A>) -> f64 {
    if h.nrows() == 0 {
        return 0.0;
    }
    let mean = h.sum_axis(Axis(0)) / cast::<A>(h.nrows() as f64);
    let mut sse = 0.0;
    let mut sst = 0.0;
    for (row, rec) in h.rows().into_iter().zip(h_hat.rows()) {
        for ((&x, &y), &m) in row.iter().zip(rec).zip(&mean) {
            sse += to_f64((x - y) * (x - y));
            sst += to_f64((x - m) * (x - m));
        }
    }
    if sst == 0.0 {
        return if sse == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - sse / sst
}
