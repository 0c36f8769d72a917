//! Sanity metrics over feature activation tables: frequencies, square and trajectory
//! entropies, probe classification scores, ℓ0/R², the sparsity sweep and frequency
//! histograms.

mod table;

pub use table::{FeatureActivationTable, FeatureSet, ACTIVATION_EPSILON};

use std::collections::HashMap;
use std::fmt::Write as _;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::csae::{train, CsaeParams, LossWeights, ProbeParams, TrainConfig, TrainData};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Features active on fewer than this fraction of samples are dead.
    pub dead: f64,
    /// Features active on more than this fraction are overactive.
    pub overactive: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { dead: 1e-3, overactive: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencySummary {
    pub frequencies: Vec<f64>,
    pub dead: usize,
    pub overactive: usize,
}

pub fn activation_frequency(table: &FeatureActivationTable, set: FeatureSet, th: &Thresholds) -> Result<FrequencySummary> {
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    let all = table.frequencies();
    let frequencies: Vec<f64> = all[table.range(set)].to_vec();
    let dead = frequencies.iter().filter(|&&f| f < th.dead).count();
    let overactive = frequencies.iter().filter(|&&f| f > th.overactive).count();
    Ok(FrequencySummary { frequencies, dead, overactive })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Squares,
    Trajectories,
}

/// How a feature's activations are attributed to partition cells.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyMode {
    #[default]
    Mass,
    Count,
}

/// Natural-log entropy of a nonnegative weight vector after normalization.
pub fn entropy(weights: impl IntoIterator<Item = f64>) -> Option<f64> {
    let w: Vec<f64> = weights.into_iter().filter(|&x| x > 0.0).collect();
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let h = -w.iter().map(|&x| x / total).map(|p| p * p.ln()).sum::<f64>();
    Some(h.max(0.0))
}

fn cell_weights(table: &FeatureActivationTable, column: &[(u32, f32)], part: Partition, mode: EntropyMode) -> Vec<f64> {
    let mut cells: HashMap<u64, f64> = HashMap::new();
    for &(s, v) in column {
        let m = &table.samples[s as usize];
        let key = match part {
            Partition::Squares => u64::from(m.square),
            Partition::Trajectories => m.traj_id,
        };
        *cells.entry(key).or_default() += match mode {
            EntropyMode::Mass => f64::from(v),
            EntropyMode::Count => 1.0,
        };
    }
    let mut keys: Vec<u64> = cells.keys().copied().collect();
    keys.sort_unstable();
    keys.into_iter().map(|k| cells[&k]).collect()
}

/// `H(A_s)` or `H(A_t)` for one feature.
pub fn partition_entropy(table: &FeatureActivationTable, feature: usize, part: Partition, mode: EntropyMode) -> Result<f64> {
    let col = table.column(feature);
    entropy(cell_weights(table, &col, part, mode)).ok_or(Error::UndefinedEntropy(feature))
}

/// Entropies of every feature; `None` for never-active features.
pub fn all_entropies(table: &FeatureActivationTable, part: Partition, mode: EntropyMode) -> Vec<Option<f64>> {
    table.columns().iter().map(|col| entropy(cell_weights(table, col, part, mode))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

/// Scores predictions with the positive class `true`. Precision is 0 when nothing is
/// predicted positive.
pub fn classification_metrics(predicted: &[bool], actual: &[bool]) -> Result<ClassificationMetrics> {
    if predicted.len() != actual.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} labels", predicted.len(), actual.len())));
    }
    let pos = actual.iter().filter(|&&a| a).count();
    if pos == 0 || pos == actual.len() {
        return Err(Error::DegenerateClasses(format!("{pos} positives among {} samples", actual.len())));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p, a) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = tp as f64 / (tp + fn_) as f64;
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(ClassificationMetrics { f1, precision, recall, tp, fp, fn_, tn })
}

/// A logistic probe over one feature set of a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub set: FeatureSet,
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearProbe {
    /// The probe trained jointly with the CSAE, which reads the d-features.
    pub fn from_csae(probe: &ProbeParams<f32>) -> LinearProbe {
        LinearProbe { set: FeatureSet::D, w: probe.w.iter().map(|&x| f64::from(x)).collect(), b: f64::from(probe.b) }
    }

    fn logit(&self, table: &FeatureActivationTable, sample: usize, offset: usize) -> f64 {
        let r = table.range(self.set);
        let (ids, vals) = table.sample(sample);
        let mut z = self.b;
        for (&f, &v) in ids.iter().zip(vals) {
            let f = f as usize;
            if r.contains(&f) {
                z += self.w[f - offset] * f64::from(v);
            }
        }
        z
    }

    pub fn predict(&self, table: &FeatureActivationTable) -> Result<Vec<bool>> {
        let r = table.range(self.set);
        if r.len() != self.w.len() {
            return Err(Error::ShapeMismatch(format!("probe over {} features, set has {}", self.w.len(), r.len())));
        }
        Ok((0..table.len()).map(|s| self.logit(table, s, r.start) > 0.0).collect())
    }
}

/// Threshold-0.5 predictions of `probe` against the optimality labels of `table`.
pub fn probe_classification_metrics(probe: &LinearProbe, table: &FeatureActivationTable) -> Result<ClassificationMetrics> {
    classification_metrics(&probe.predict(table)?, &table.labels())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeFit {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for ProbeFit {
    fn default() -> Self {
        ProbeFit { epochs: 200, learning_rate: 0.05, l2: 1e-4 }
    }
}

/// Full-batch logistic regression with Adam on one feature set; classes are weighted to
/// balance. Deterministic: zero init, fixed epochs.
pub fn fit_probe(table: &FeatureActivationTable, set: FeatureSet, fit: &ProbeFit) -> Result<LinearProbe> {
    let labels = table.labels();
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::DegenerateClasses(format!("{pos} positives among {} samples", labels.len())));
    }
    let r = table.range(set);
    let n = labels.len() as f64;
    let (wp, wn) = (n / (2.0 * pos as f64), n / (2.0 * (labels.len() - pos) as f64));
    let mut probe = LinearProbe { set, w: vec![0.0; r.len()], b: 0.0 };
    let k = r.len() + 1;
    let (mut m, mut v) = (vec![0.0; k], vec![0.0; k]);
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    for t in 1..=fit.epochs {
        let mut g = vec![0.0; k];
        for (s, &y) in labels.iter().enumerate() {
            let p = 1.0 / (1.0 + (-probe.logit(table, s, r.start)).exp());
            let e = (p - if y { 1.0 } else { 0.0 }) * if y { wp } else { wn } / n;
            let (ids, vals) = table.sample(s);
            for (&f, &val) in ids.iter().zip(vals) {
                let f = f as usize;
                if r.contains(&f) {
                    g[f - r.start] += e * f64::from(val);
                }
            }
            g[k - 1] += e;
        }
        for (i, w) in probe.w.iter().enumerate() {
            g[i] += fit.l2 * w;
        }
        let (c1, c2) = (1.0 - b1.powi(t as i32), 1.0 - b2.powi(t as i32));
        for i in 0..k {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let step = fit.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            if i + 1 == k {
                probe.b -= step;
            } else {
                probe.w[i] -= step;
            }
        }
    }
    Ok(probe)
}

/// Mean ℓ0 and R² over a stream of rows, in two passes of bounded-size chunks.
pub fn l0_r2(params: &CsaeParams<f32>, rows: ArrayView2<'_, f32>) -> Result<(f64, f64)> {
    if rows.ncols() != params.dim() {
        return Err(Error::ShapeMismatch(format!("rows of width {}, model width {}", rows.ncols(), params.dim())));
    }
    let n = rows.nrows();
    if n == 0 {
        return Err(Error::EmptyTable);
    }
    let chunk = 4096;
    let mut mean = vec![0f64; rows.ncols()];
    for r in rows.rows() {
        for (m, &x) in mean.iter_mut().zip(r) {
            *m += f64::from(x);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let (mut active, mut sse, mut sst) = (0usize, 0f64, 0f64);
    for block in rows.axis_chunks_iter(ndarray::Axis(0), chunk) {
        let f = params.encode_batch(block)?;
        active += f.iter().filter(|&&x| x > 0.0).count();
        let h_hat = params.decode_batch(f.view())?;
        for (r, rh) in block.rows().into_iter().zip(h_hat.rows()) {
            for ((&x, &y), &m) in r.iter().zip(rh).zip(&mean) {
                let (x, y) = (f64::from(x), f64::from(y));
                sse += (x - y) * (x - y);
                sst += (x - m) * (x - m);
            }
        }
    }
    let r2 = if sst == 0.0 { if sse == 0.0 { 1.0 } else { 0.0 } } else { 1.0 - sse / sst };
    Ok((active as f64 / n as f64, r2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub l0: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// Least-squares fit of `ln(1 − R²)` against `ln ℓ0`.
    pub fit: Option<PowerLawFit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub rms_residual: f64,
}

impl SweepResult {
    /// ℓ0 non-increasing up to the relative tolerance, R² non-increasing up to the
    /// absolute tolerance, as λ grows.
    pub fn is_monotone(&self, l0_tol: f64, r2_tol: f64) -> bool {
        self.points.windows(2).all(|w| w[1].l0 <= w[0].l0 * (1.0 + l0_tol) && w[1].r2 <= w[0].r2 + r2_tol)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,l0,r2\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{}", p.lambda, p.l0, p.r2);
        }
        s
    }
}

pub fn power_law_fit(points: &[SweepPoint]) -> Option<PowerLawFit> {
    let xy: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.l0 > 0.0 && p.r2 < 1.0)
        .map(|p| (p.l0.ln(), (1.0 - p.r2).ln()))
        .collect();
    if xy.len() < 2 {
        return None;
    }
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xy.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    Some(PowerLawFit { slope, intercept, rms_residual: (rss / n).sqrt() })
}

/// Trains one model per sparsity weight with a shared seed and evaluates each on the
/// validation rows. Points are returned in ascending λ.
pub fn lambda_sweep(
    data: &TrainData,
    validation: &TrainData,
    lambdas: &[f64],
    n_f: usize,
    n_c: usize,
    cfg: &TrainConfig,
    base: &LossWeights,
) -> Result<SweepResult> {
    if lambdas.len() < 3 {
        return Err(Error::InvalidInput("a sweep needs at least 3 values".into()));
    }
    let mut lambdas = lambdas.to_vec();
    lambdas.sort_by(f64::total_cmp);
    let mut points = Vec::new();
    for &lambda in &lambdas {
        let weights = LossWeights { lambda_sparse: lambda, ..*base };
        let out = train(data, Some(validation), n_f, n_c, cfg, &weights)?;
        let (l0, r2) = l0_r2(&out.params, validation.rows().view())?;
        log::info!("lambda {lambda}: l0 {l0:.3}, r2 {r2:.4}");
        points.push(SweepPoint { lambda, l0, r2 });
    }
    let fit = power_law_fit(&points);
    Ok(SweepResult { points, fit })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges in log10 F over `[-6, 0]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Features below `1e-6`, never placed in a bin.
    pub dead: usize,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.dead + self.counts.iter().sum::<usize>()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lo,hi,count\n");
        let _ = writeln!(s, "-inf,-6,{}", self.dead);
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", self.edges[i], self.edges[i + 1], c);
        }
        s
    }
}

pub fn frequency_histogram(frequencies: &[f64], bins: usize) -> Result<Histogram> {
    if frequencies.is_empty() {
        return Err(Error::EmptyTable);
    }
    let bins = bins.max(1);
    let edges: Vec<f64> = (0..=bins).map(|i| -6.0 + 6.0 * i as f64 / bins as f64).collect();
    let mut counts = vec![0; bins];
    let mut dead = 0;
    for &f in frequencies {
        if f < 1e-6 {
            dead += 1;
            continue;
        }
        let x = f.min(1.0).log10();
        let k = (((x + 6.0) / 6.0) * bins as f64).floor() as usize;
        counts[k.min(bins - 1)] += 1;
    }
    Ok(Histogram { edges, counts, dead })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    /// Values that entered the mean.
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: impl IntoIterator<Item = f64>) -> MeanStd {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return MeanStd { mean: f64::NAN, std: f64::NAN, n: 0 };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        MeanStd { mean, std, n: v.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub set: FeatureSet,
    pub size: usize,
    pub dead: usize,
    pub overactive: usize,
    pub h_squares: MeanStd,
    pub h_trajectories: MeanStd,
    pub probe: Option<ClassificationMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub l0: f64,
    pub r2: f64,
    pub samples: usize,
}

fn fmt_opt(x: f64, digits: usize) -> String {
    if x.is_finite() {
        format!("{x:.digits$}")
    } else {
        "-".to_string()
    }
}

impl MetricReport {
    /// Text table with columns Features, Dead, Overactive, H(A_s), H(A_t), F1, P, R.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:>6} {:>6} {:>11} {:>15} {:>15} {:>7} {:>7} {:>7}",
            "Features", "Size", "Dead", "Overactive", "H(A_s)", "H(A_t)", "F1", "P", "R"
        );
        for r in &self.rows {
            let ms = |m: &MeanStd| format!("{}±{}", fmt_opt(m.mean, 2), fmt_opt(m.std, 2));
            let (f1, p, rc) = r.probe.map_or((f64::NAN, f64::NAN, f64::NAN), |c| (c.f1, c.precision, c.recall));
            let _ = writeln!(
                s,
                "{:<8} {:>6} {:>6} {:>11} {:>15} {:>15} {:>7} {:>7} {:>7}",
                r.set.name(),
                r.size,
                r.dead,
                r.overactive,
                ms(&r.h_squares),
                ms(&r.h_trajectories),
                fmt_opt(f1, 3),
                fmt_opt(p, 3),
                fmt_opt(rc, 3)
            );
        }
        let _ = writeln!(s, "l0 = {:.2}, R2 = {:.4}, samples = {}", self.l0, self.r2, self.samples);
        s
    }

    pub fn row(&self, set: FeatureSet) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.set == set)
    }
}

/// Builds the c/d/f report on `table`. Probes are looked up per feature set; missing
/// probes leave the classification columns empty.
pub fn metric_report(
    table: &FeatureActivationTable,
    probes: &[LinearProbe],
    l0: f64,
    r2: f64,
    th: &Thresholds,
    mode: EntropyMode,
) -> Result<MetricReport> {
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    let hs = all_entropies(table, Partition::Squares, mode);
    let ht = all_entropies(table, Partition::Trajectories, mode);
    let mut rows = Vec::new();
    for set in FeatureSet::ALL {
        let r = table.range(set);
        let freq = activation_frequency(table, set, th)?;
        let probe = match probes.iter().find(|p| p.set == set) {
            Some(p) => Some(probe_classification_metrics(p, table)?),
            None => None,
        };
        rows.push(MetricRow {
            set,
            size: r.len(),
            dead: freq.dead,
            overactive: freq.overactive,
            h_squares: MeanStd::of(hs[r.clone()].iter().flatten().copied()),
            h_trajectories: MeanStd::of(ht[r].iter().flatten().copied()),
            probe,
        });
    }
    Ok(MetricReport { rows, l0, r2, samples: table.len() })
}
