//! Exact t-SNE for small point sets. Used for display only.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    /// `None` picks `max(n / (4 * exaggeration), 50)`.
    pub learning_rate: Option<f64>,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 500,
            learning_rate: None,
            early_exaggeration: 12.0,
            exaggeration_iterations: 100,
            seed: 0,
        }
    }
}

fn sq_distances(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Row-conditional affinities with the bandwidth found by bisection on the entropy.
fn affinities(d: &Array2<f64>, perplexity: f64) -> Array2<f64> {
    let n = d.nrows();
    let target = perplexity.min((n - 1) as f64 / 3.0).max(1.0).ln();
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        let (mut beta, mut lo, mut hi) = (1.0f64, 0.0f64, f64::INFINITY);
        let dmin = (0..n).filter(|&j| j != i).map(|j| d[[i, j]]).fold(f64::INFINITY, f64::min);
        for _ in 0..64 {
            let mut sum = 0.0;
            let mut dot = 0.0;
            for j in (0..n).filter(|&j| j != i) {
                let w = (-(d[[i, j]] - dmin) * beta).exp();
                p[[i, j]] = w;
                sum += w;
                dot += w * (d[[i, j]] - dmin);
            }
            let h = sum.ln() + beta * dot / sum;
            for j in 0..n {
                p[[i, j]] /= sum;
            }
            if (h - target).abs() < 1e-5 {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
    }
    let sym = (&p + &p.t()) / (2.0 * n as f64);
    sym.mapv(|v: f64| v.max(1e-12))
}

/// Embeds the rows of `x` in two dimensions.
pub fn tsne(x: ArrayView2<'_, f64>, cfg: &TsneConfig) -> Result<Array2<f64>> {
    let n = x.nrows();
    if n < 3 {
        return Err(Error::InvalidInput(format!("t-SNE needs at least 3 points, got {n}")));
    }
    let p = affinities(&sq_distances(x), cfg.perplexity);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y = Array2::from_shape_fn((n, 2), |_| normal.sample(&mut rng));
    let mut velocity = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut num = Array2::<f64>::zeros((n, n));
    let lr = cfg.learning_rate.unwrap_or((n as f64 / (4.0 * cfg.early_exaggeration)).max(50.0));
    for it in 0..cfg.iterations {
        let exaggeration = if it < cfg.exaggeration_iterations { cfg.early_exaggeration } else { 1.0 };
        let momentum = if it < 250 { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[[i, 0]] - y[[j, 0]];
                let dy = y[[i, 1]] - y[[j, 1]];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[[i, j]] = v;
                num[[j, i]] = v;
                z += 2.0 * v;
            }
        }
        let mut grad = Array2::<f64>::zeros((n, 2));
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let q = (num[[i, j]] / z).max(1e-12);
                let m = 4.0 * (exaggeration * p[[i, j]] - q) * num[[i, j]];
                grad[[i, 0]] += m * (y[[i, 0]] - y[[j, 0]]);
                grad[[i, 1]] += m * (y[[i, 1]] - y[[j, 1]]);
            }
        }
        for ((g, v), gain) in grad.iter().zip(velocity.iter()).zip(gains.iter_mut()) {
            *gain = if (*g > 0.0) != (*v > 0.0) { *gain + 0.2 } else { (*gain * 0.8).max(0.01) };
        }
        velocity = momentum * &velocity - lr * &(&gains * &grad);
        y += &velocity;
        let mean = y.mean_axis(ndarray::Axis(0)).expect("non-empty");
        y -= &mean;
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("t-SNE diverged".into()));
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn separated_blobs_stay_separated() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Array2::from_shape_fn((40, 5), |(i, _)| if i < 20 { 0.0 } else { 10.0 } + rng.random_range(-0.5..0.5));
        let cfg = TsneConfig { iterations: 300, perplexity: 5.0, ..TsneConfig::default() };
        let y = tsne(x.view(), &cfg).unwrap();
        let centroid = |r: std::ops::Range<usize>| {
            let k = r.len() as f64;
            r.fold([0.0, 0.0], |a, i| [a[0] + y[[i, 0]] / k, a[1] + y[[i, 1]] / k])
        };
        let (a, b) = (centroid(0..20), centroid(20..40));
        let between = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let spread = (0..20).map(|i| ((y[[i, 0]] - a[0]).powi(2) + (y[[i, 1]] - a[1]).powi(2)).sqrt()).fold(0.0, f64::max);
        assert!(between > 2.0 * spread, "between {between}, spread {spread}");
        assert_eq!(tsne(x.view(), &cfg).unwrap(), y);
    }
}
