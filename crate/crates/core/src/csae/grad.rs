//! Batched composite loss and its analytic gradients.

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis, NdFloat, Zip};
use serde::{Deserialize, Serialize};

use super::{cast, sigmoid, to_f64, CsaeParams, LossWeights, ProbeParams, PROBE_EPS};
use crate::error::{Error, Result};

/// Rows are `2C`-wide inputs. `Pairs` rows are aligned: row `b` of `plus` and `minus`
/// share the same root half.
#[derive(Debug, Clone, Copy)]
pub enum Batch<'a, A> {
    Pairs { plus: ArrayView2<'a, A>, minus: ArrayView2<'a, A> },
    Single(ArrayView2<'a, A>),
}

impl<A> Batch<'_, A> {
    pub fn len(&self) -> usize {
        match self {
            Batch::Pairs { plus, .. } => plus.nrows(),
            Batch::Single(h) => h.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Batch means of the unweighted terms; `total` is the weighted objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec_plus: f64,
    pub rec_minus: f64,
    pub root_plus: f64,
    pub root_minus: f64,
    pub contrast: f64,
    pub probe: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<A = f32> {
    pub w_e: Array2<A>,
    pub b_e: Array1<A>,
    pub w_d: Array2<A>,
    pub b_d: Array1<A>,
    pub probe_w: Array1<A>,
    pub probe_b: A,
}

impl<A: NdFloat> Gradients<A> {
    pub fn zeros(p: &CsaeParams<A>) -> Self {
        Gradients {
            w_e: Array2::zeros(p.w_e.dim()),
            b_e: Array1::zeros(p.n_f()),
            w_d: Array2::zeros(p.w_d.dim()),
            b_d: Array1::zeros(p.dim()),
            probe_w: Array1::zeros(p.n_d()),
            probe_b: A::zero(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        let m = |a: &mut f64, x: &A| *a = a.max(to_f64(x.abs()));
        let mut out = to_f64(self.probe_b.abs());
        self.w_e.iter().for_each(|x| m(&mut out, x));
        self.b_e.iter().for_each(|x| m(&mut out, x));
        self.w_d.iter().for_each(|x| m(&mut out, x));
        self.b_d.iter().for_each(|x| m(&mut out, x));
        self.probe_w.iter().for_each(|x| m(&mut out, x));
        out
    }
}

/// Which terms enter the objective; the contrastive term is split into its c and d parts.
/// Used to check each term in isolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermMask {
    pub rec: bool,
    pub root: bool,
    pub contrast_c: bool,
    pub contrast_d: bool,
    pub probe: bool,
}

impl TermMask {
    pub const ALL: TermMask = TermMask { rec: true, root: true, contrast_c: true, contrast_d: true, probe: true };
}

struct Side<'a, A> {
    h: ArrayView2<'a, A>,
    z: Array2<A>,
    f: Array2<A>,
    df: Array2<A>,
}

impl<'a, A: NdFloat> Side<'a, A> {
    fn forward(h: ArrayView2<'a, A>, p: &CsaeParams<A>) -> Self {
        let z = h.dot(&p.w_e.t()) + &p.b_e;
        let f = z.mapv(|x| x.max(A::zero()));
        let df = Array2::zeros(f.dim());
        Side { h, z, f, df }
    }

    fn backward(self, g: &mut Gradients<A>) {
        let mut dz = self.df;
        Zip::from(&mut dz).and(&self.z).for_each(|d, &z| {
            if z <= A::zero() {
                *d = A::zero();
            }
        });
        g.w_e += &dz.t().dot(&self.h);
        g.b_e += &dz.sum_axis(Axis(0));
    }
}

// ‖H − Ĥ‖² plus the column-norm-weighted L1 penalty over the block `rows × cols` of the
// decoder. Returns the scaled loss; gradients are multiplied by `weight`.
#[allow(clippy::too_many_arguments)]
fn rec_block<A: NdFloat>(
    target: ArrayView2<'_, A>,
    codes: ArrayView2<'_, A>,
    mut df: ArrayViewMut2<'_, A>,
    p: &CsaeParams<A>,
    g: &mut Gradients<A>,
    rows: usize,
    cols: usize,
    lambda: A,
    scale: A,
    weight: A,
) -> A {
    let w = p.w_d.slice(s![..rows, ..cols]);
    let norms = w.map_axis(Axis(0), |c| c.dot(&c).sqrt());
    let r = codes.dot(&w.t()) + &p.b_d.slice(s![..rows]) - &target;
    let sse = r.iter().fold(A::zero(), |acc, &x| acc + x * x);
    let col_sums = codes.sum_axis(Axis(0));
    let penalty = col_sums.dot(&norms);

    let two = A::one() + A::one();
    let e = r.mapv(|x| x * two * scale * weight);
    let mut gw = g.w_d.slice_mut(s![..rows, ..cols]);
    gw += &e.t().dot(&codes);
    let mut gb = g.b_d.slice_mut(s![..rows]);
    gb += &e.sum_axis(Axis(0));
    df += &e.dot(&w);
    let k = lambda * scale * weight;
    df += &norms.mapv(|n| n * k);
    for (i, (col, &n)) in w.columns().into_iter().zip(&norms).enumerate() {
        if n > A::zero() {
            let coef = k * col_sums[i] / n;
            gw.column_mut(i).scaled_add(coef, &col);
        }
    }
    (sse + lambda * penalty) * scale
}

/// Loss breakdown and exact gradients for one batch. With `stop_probe_gradient` the probe
/// is trained on the features without backpropagating into the encoder.
pub fn total_loss_and_gradients<A: NdFloat>(
    batch: Batch<'_, A>,
    params: &CsaeParams<A>,
    probe: &ProbeParams<A>,
    weights: &LossWeights,
    stop_probe_gradient: bool,
) -> Result<(LossBreakdown, Gradients<A>)> {
    loss_and_gradients_masked(batch, params, probe, weights, stop_probe_gradient, TermMask::ALL)
}

pub fn loss_and_gradients_masked<A: NdFloat>(
    batch: Batch<'_, A>,
    params: &CsaeParams<A>,
    probe: &ProbeParams<A>,
    weights: &LossWeights,
    stop_probe_gradient: bool,
    mask: TermMask,
) -> Result<(LossBreakdown, Gradients<A>)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let dim = params.dim();
    let check = |h: &ArrayView2<'_, A>| {
        if h.ncols() != dim {
            return Err(Error::ShapeMismatch(format!("batch rows of width {}, model width {dim}", h.ncols())));
        }
        Ok(())
    };
    let scale = A::one() / cast::<A>(n as f64);
    let ls = cast::<A>(weights.lambda_sparse);
    let mut g = Gradients::zeros(params);
    let mut out = LossBreakdown::default();
    let (nc, ch) = (params.n_c(), params.channels());

    match batch {
        Batch::Single(h) => {
            check(&h)?;
            let mut side = Side::forward(h, params);
            if mask.rec {
                let l = rec_block(h, side.f.view(), side.df.view_mut(), params, &mut g, dim, params.n_f(), ls, scale, A::one());
                out.rec_plus = to_f64(l);
            }
            side.backward(&mut g);
        }
        Batch::Pairs { plus, minus } => {
            check(&plus)?;
            check(&minus)?;
            if plus.dim() != minus.dim() {
                return Err(Error::ShapeMismatch(format!("pair halves {:?} vs {:?}", plus.dim(), minus.dim())));
            }
            let mut sp = Side::forward(plus, params);
            let mut sm = Side::forward(minus, params);
            if mask.rec {
                for (side, slot) in [(&mut sp, &mut out.rec_plus), (&mut sm, &mut out.rec_minus)] {
                    let l = rec_block(side.h, side.f.view(), side.df.view_mut(), params, &mut g, dim, params.n_f(), ls, scale, A::one());
                    *slot = to_f64(l);
                }
            }
            if mask.root && nc > 0 {
                let aux = cast::<A>(weights.lambda_aux);
                for (side, slot) in [(&mut sp, &mut out.root_plus), (&mut sm, &mut out.root_minus)] {
                    let codes = side.f.slice(s![.., ..nc]).to_owned();
                    let df = side.df.slice_mut(s![.., ..nc]);
                    let l = rec_block(side.h.slice(s![.., ..ch]), codes.view(), df, params, &mut g, ch, nc, ls, scale, aux);
                    *slot = to_f64(l);
                }
            }
            let lc = cast::<A>(weights.lambda_contrast) * scale;
            let mut contrast = A::zero();
            if mask.contrast_c && nc > 0 {
                let diff = &sp.f.slice(s![.., ..nc]) - &sm.f.slice(s![.., ..nc]);
                contrast = contrast + diff.iter().fold(A::zero(), |acc, &x| acc + x.abs());
                let sign = diff.mapv(|x| {
                    if x > A::zero() {
                        lc
                    } else if x < A::zero() {
                        -lc
                    } else {
                        A::zero()
                    }
                });
                let mut a = sp.df.slice_mut(s![.., ..nc]);
                a += &sign;
                let mut b = sm.df.slice_mut(s![.., ..nc]);
                b -= &sign;
            }
            if mask.contrast_d {
                let dp = sp.f.slice(s![.., nc..]).to_owned();
                let dm = sm.f.slice(s![.., nc..]).to_owned();
                contrast = contrast + Zip::from(&dp).and(&dm).fold(A::zero(), |acc, &a, &b| acc + (a * b).abs());
                sp.df.slice_mut(s![.., nc..]).scaled_add(lc, &dm);
                sm.df.slice_mut(s![.., nc..]).scaled_add(lc, &dp);
            }
            out.contrast = to_f64(contrast * scale);

            if mask.probe {
                let lp = cast::<A>(weights.lambda_probe) * scale;
                let eps = cast::<A>(PROBE_EPS);
                let mut loss = A::zero();
                for (side, positive) in [(&mut sp, true), (&mut sm, false)] {
                    let d = side.f.slice(s![.., nc..]).to_owned();
                    let logits = d.dot(&probe.w) + probe.b;
                    let mut gz = Array1::<A>::zeros(n);
                    for (b, &z) in logits.iter().enumerate() {
                        let p = sigmoid(z);
                        let clamped = p < eps || p > A::one() - eps;
                        let pc = p.max(eps).min(A::one() - eps);
                        if positive {
                            loss = loss - pc.ln();
                            if !clamped {
                                gz[b] = -(A::one() - p) * lp;
                            }
                        } else {
                            loss = loss - (A::one() - pc).ln();
                            if !clamped {
                                gz[b] = p * lp;
                            }
                        }
                    }
                    g.probe_w += &d.t().dot(&gz);
                    g.probe_b = g.probe_b + gz.sum();
                    if !stop_probe_gradient {
                        let mut df = side.df.slice_mut(s![.., nc..]);
                        for (mut row, &gb) in df.rows_mut().into_iter().zip(&gz) {
                            row.scaled_add(gb, &probe.w);
                        }
                    }
                }
                out.probe = to_f64(loss * scale);
            }
            sp.backward(&mut g);
            sm.backward(&mut g);
        }
    }
    out.total = out.rec_plus
        + out.rec_minus
        + weights.lambda_aux * (out.root_plus + out.root_minus)
        + weights.lambda_contrast * out.contrast
        + weights.lambda_probe * out.probe;
    if !out.total.is_finite() {
        return Err(Error::NonFiniteLoss { step: 0, detail: format!("{out:?}") });
    }
    Ok((out, g))
}
