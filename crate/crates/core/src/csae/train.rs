//! Adam training loop with validation logging and dead-feature resampling.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use ndarray::{concatenate, Array1, Array2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grad::{total_loss_and_gradients, Batch, Gradients, LossBreakdown};
use super::{reconstruction_stats, CsaeParams, LossWeights, ProbeParams};
use crate::dataset::PairSet;
use crate::digest::derive_seed;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Resample features with activation frequency below 0.1% over the last interval.
    pub resample_interval: Option<usize>,
    pub validation_interval: usize,
    /// Cap on validation units (rows or pairs) evaluated per log row.
    pub validation_units: usize,
    pub probe_stop_gradient: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.0,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 256,
            steps: 2000,
            resample_interval: None,
            validation_interval: 100,
            validation_units: 4096,
            probe_stop_gradient: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.epsilon <= 0.0 || self.batch_size == 0 || self.validation_interval == 0 {
            return bad("epsilon, batch size and validation interval must be positive");
        }
        if self.resample_interval == Some(0) {
            return bad("resample interval must be positive");
        }
        Ok(())
    }
}

/// Training rows plus, for contrastive training, aligned `(optimal, suboptimal)` row pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    rows: Array2<f32>,
    pairs: Option<Vec<(usize, usize)>>,
}

impl TrainData {
    pub fn single(rows: Array2<f32>) -> TrainData {
        TrainData { rows, pairs: None }
    }

    pub fn pairs(rows: Array2<f32>, pairs: Vec<(usize, usize)>) -> Result<TrainData> {
        let n = rows.nrows();
        if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= n || b >= n) {
            return Err(Error::InvalidInput(format!("pair ({a}, {b}) out of range for {n} rows")));
        }
        Ok(TrainData { rows, pairs: Some(pairs) })
    }

    fn rows_of(set: &PairSet) -> Array2<f32> {
        Array2::from_shape_vec((set.len(), set.dim()), set.data.clone()).expect("pair set rows")
    }

    /// Every suboptimal row paired with the optimal row of the same root, depth and square.
    pub fn from_pair_set(set: &PairSet) -> Result<TrainData> {
        let mut all = BTreeSet::new();
        for epoch in 0.. {
            let before = all.len();
            all.extend(set.contrastive_pairs(epoch));
            if all.len() == before {
                break;
            }
        }
        TrainData::pairs(TrainData::rows_of(set), all.into_iter().collect())
    }

    /// Single `C`-wide states for a plain SAE: every trajectory half plus each distinct
    /// root half once.
    pub fn states_from_pair_set(set: &PairSet) -> TrainData {
        let c = set.channels;
        let mut seen = BTreeSet::new();
        let mut data = Vec::new();
        for (i, m) in set.meta.iter().enumerate() {
            let row = set.row(i);
            if seen.insert((m.root_id, m.square)) {
                data.extend_from_slice(&row[..c]);
            }
            data.extend_from_slice(&row[c..]);
        }
        let n = data.len() / c.max(1);
        TrainData::single(Array2::from_shape_vec((n, c), data).expect("state rows"))
    }

    pub fn rows(&self) -> &Array2<f32> {
        &self.rows
    }

    pub fn pair_list(&self) -> Option<&[(usize, usize)]> {
        self.pairs.as_deref()
    }

    pub fn is_contrastive(&self) -> bool {
        self.pairs.is_some()
    }

    /// Training units: pairs in contrastive mode, rows otherwise.
    pub fn len(&self) -> usize {
        self.pairs.as_ref().map_or(self.rows.nrows(), Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// `(plus, minus)` for pairs, `(rows, None)` otherwise.
    fn gather(&self, units: &[usize]) -> (Array2<f32>, Option<Array2<f32>>) {
        match &self.pairs {
            Some(p) => {
                let pos: Vec<usize> = units.iter().map(|&u| p[u].0).collect();
                let neg: Vec<usize> = units.iter().map(|&u| p[u].1).collect();
                (self.rows.select(Axis(0), &pos), Some(self.rows.select(Axis(0), &neg)))
            }
            None => (self.rows.select(Axis(0), units), None),
        }
    }
}

fn batch_of<'a>(plus: &'a Array2<f32>, minus: &'a Option<Array2<f32>>) -> Batch<'a, f32> {
    match minus {
        Some(m) => Batch::Pairs { plus: plus.view(), minus: m.view() },
        None => Batch::Single(plus.view()),
    }
}

/// Adam over all CSAE and probe parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    t: i32,
    m: Gradients<f32>,
    v: Gradients<f32>,
}

fn adam_update<D: ndarray::Dimension>(
    p: &mut ndarray::Array<f32, D>,
    g: &ndarray::Array<f32, D>,
    m: &mut ndarray::Array<f32, D>,
    v: &mut ndarray::Array<f32, D>,
    k: (f32, f32, f32, f32, f32, f32),
) {
    let (lr, b1, b2, eps, c1, c2) = k;
    Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    });
}

impl Adam {
    pub fn new(cfg: &TrainConfig, params: &CsaeParams<f32>) -> Adam {
        Adam {
            lr: cfg.learning_rate as f32,
            beta1: cfg.beta1 as f32,
            beta2: cfg.beta2 as f32,
            eps: cfg.epsilon as f32,
            t: 0,
            m: Gradients::zeros(params),
            v: Gradients::zeros(params),
        }
    }

    pub fn step(&mut self, params: &mut CsaeParams<f32>, probe: &mut ProbeParams<f32>, g: &Gradients<f32>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let k = (self.lr, self.beta1, self.beta2, self.eps, c1, c2);
        let (m, v) = (&mut self.m, &mut self.v);
        adam_update(&mut params.w_e, &g.w_e, &mut m.w_e, &mut v.w_e, k);
        adam_update(&mut params.b_e, &g.b_e, &mut m.b_e, &mut v.b_e, k);
        adam_update(&mut params.w_d, &g.w_d, &mut m.w_d, &mut v.w_d, k);
        adam_update(&mut params.b_d, &g.b_d, &mut m.b_d, &mut v.b_d, k);
        adam_update(&mut probe.w, &g.probe_w, &mut m.probe_w, &mut v.probe_w, k);
        let mut pb = ndarray::arr0(probe.b);
        let gb = ndarray::arr0(g.probe_b);
        let mut mb = ndarray::arr0(m.probe_b);
        let mut vb = ndarray::arr0(v.probe_b);
        adam_update(&mut pb, &gb, &mut mb, &mut vb, k);
        probe.b = pb[()];
        m.probe_b = mb[()];
        v.probe_b = vb[()];
    }

    /// Clears optimizer state of one feature after it has been resampled.
    fn reset_feature(&mut self, i: usize, n_c: usize) {
        for s in [&mut self.m, &mut self.v] {
            s.w_e.row_mut(i).fill(0.0);
            s.b_e[i] = 0.0;
            s.w_d.column_mut(i).fill(0.0);
            if i >= n_c {
                s.probe_w[i - n_c] = 0.0;
            }
        }
    }
}

/// One logged evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    pub l0: f64,
    pub r2: f64,
}

impl LogRow {
    pub const CSV_HEADER: &'static str = "step,rec_plus,rec_minus,root_plus,root_minus,contrast,probe,total,l0,r2";

    pub fn csv_line(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step, l.rec_plus, l.rec_minus, l.root_plus, l.root_minus, l.contrast, l.probe, l.total, self.l0, self.r2
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(LogRow::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }

    /// Appends one row, writing the header first if the file is new or empty.
    pub fn append_csv(path: &Path, row: &LogRow) -> Result<()> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(f, "{}", LogRow::CSV_HEADER)?;
        }
        writeln!(f, "{}", row.csv_line())?;
        Ok(())
    }

    pub fn last(&self) -> Option<&LogRow> {
        self.rows.last()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: CsaeParams<f32>,
    pub probe: ProbeParams<f32>,
    pub log: TrainingLog,
    pub resampled: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: LossBreakdown,
    pub l0: f64,
    pub r2: f64,
}

/// Loss terms, ℓ0 and R² over the first `max_units` units of `data`. In contrastive mode
/// ℓ0 and R² pool the optimal and suboptimal rows.
pub fn evaluate(
    params: &CsaeParams<f32>,
    probe: &ProbeParams<f32>,
    data: &TrainData,
    weights: &LossWeights,
    max_units: usize,
) -> Result<Evaluation> {
    let units: Vec<usize> = (0..data.len().min(max_units)).collect();
    if units.is_empty() {
        return Err(Error::InvalidInput("nothing to evaluate".into()));
    }
    let (plus, minus) = data.gather(&units);
    let (loss, _) = total_loss_and_gradients(batch_of(&plus, &minus), params, probe, weights, true)?;
    let rows = match &minus {
        Some(m) => concatenate(Axis(0), &[plus.view(), m.view()]).expect("same width"),
        None => plus,
    };
    let (l0, r2) = reconstruction_stats(params, rows.view())?;
    Ok(Evaluation { loss, l0, r2 })
}

/// Trains a fresh CSAE with `n_f` features of which the first `n_c` are common.
pub fn train(
    data: &TrainData,
    validation: Option<&TrainData>,
    n_f: usize,
    n_c: usize,
    cfg: &TrainConfig,
    weights: &LossWeights,
) -> Result<TrainOutcome> {
    train_with(data, validation, n_f, n_c, cfg, weights, &mut |_| {})
}

/// [`train`] with a callback receiving each log row as it is produced.
pub fn train_with(
    data: &TrainData,
    validation: Option<&TrainData>,
    n_f: usize,
    n_c: usize,
    cfg: &TrainConfig,
    weights: &LossWeights,
    on_log: &mut dyn FnMut(&LogRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    weights.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("empty training data".into()));
    }
    if let Some(v) = validation {
        if v.dim() != data.dim() || v.is_contrastive() != data.is_contrastive() {
            return Err(Error::ShapeMismatch("validation data does not match training data".into()));
        }
    }
    let mut params = CsaeParams::<f32>::init(data.dim(), n_f, n_c, derive_seed(cfg.seed, 0))?;
    let mut probe = ProbeParams::<f32>::zeros(n_f - n_c);
    let mut adam = Adam::new(cfg, &params);
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let mut resample_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let eval_data = validation.unwrap_or(data);
    let mut log = TrainingLog::default();
    let mut record = |step: usize, params: &CsaeParams<f32>, probe: &ProbeParams<f32>, log: &mut TrainingLog| -> Result<()> {
        let e = evaluate(params, probe, eval_data, weights, cfg.validation_units)
            .map_err(|e| with_step(e, step))?;
        let row = LogRow { step, loss: e.loss, l0: e.l0, r2: e.r2 };
        log::debug!("step {step}: total {:.5} l0 {:.2} r2 {:.4}", e.loss.total, e.l0, e.r2);
        on_log(&row);
        log.rows.push(row);
        Ok(())
    };
    record(0, &params, &probe, &mut log)?;

    let n = data.len();
    let bs = cfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut fired = Array1::<u64>::zeros(n_f);
    let mut seen = 0u64;
    let mut resampled = 0;
    for step in 1..=cfg.steps {
        if cursor + bs > n {
            order.shuffle(&mut order_rng);
            cursor = 0;
        }
        let units = &order[cursor..cursor + bs];
        cursor += bs;
        let (plus, minus) = data.gather(units);
        let batch = batch_of(&plus, &minus);
        let (_, grads) = total_loss_and_gradients(batch, &params, &probe, weights, cfg.probe_stop_gradient)
            .map_err(|e| with_step(e, step))?;
        if cfg.resample_interval.is_some() {
            for rows in [Some(&plus), minus.as_ref()].into_iter().flatten() {
                let z = rows.dot(&params.w_e.t()) + &params.b_e;
                Zip::from(&mut fired).and(z.axis_iter(Axis(1))).for_each(|c, col| {
                    *c += col.iter().filter(|&&x| x > 0.0).count() as u64;
                });
                seen += rows.nrows() as u64;
            }
        }
        adam.step(&mut params, &mut probe, &grads);
        if let Some(every) = cfg.resample_interval {
            if step % every == 0 && step < cfg.steps {
                resampled += resample_dead(&mut params, &mut probe, &mut adam, data, &fired, seen, &mut resample_rng);
                fired.fill(0);
                seen = 0;
            }
        }
        if step % cfg.validation_interval == 0 || step == cfg.steps {
            record(step, &params, &probe, &mut log)?;
        }
    }
    Ok(TrainOutcome { params, probe, log, resampled })
}

fn with_step(e: Error, step: usize) -> Error {
    match e {
        Error::NonFiniteLoss { detail, .. } => {
            log::error!("non-finite loss at step {step}: {detail}");
            Error::NonFiniteLoss { step, detail }
        }
        other => other,
    }
}

const DEAD_FREQUENCY: f64 = 1e-3;

// Dead features are pointed at random training rows (relative to the decoder bias).
fn resample_dead(
    params: &mut CsaeParams<f32>,
    probe: &mut ProbeParams<f32>,
    adam: &mut Adam,
    data: &TrainData,
    fired: &Array1<u64>,
    seen: u64,
    rng: &mut ChaCha8Rng,
) -> usize {
    if seen == 0 {
        return 0;
    }
    let n_c = params.n_c();
    let mut count = 0;
    for i in 0..params.n_f() {
        if (fired[i] as f64) / (seen as f64) >= DEAD_FREQUENCY {
            continue;
        }
        let r = rng.random_range(0..data.rows.nrows());
        let dir = &data.rows.row(r) - &params.b_d;
        let norm = dir.dot(&dir).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            continue;
        }
        let u = dir / norm;
        params.w_d.column_mut(i).assign(&u);
        params.w_e.row_mut(i).assign(&(&u * 0.2));
        params.b_e[i] = 0.0;
        if i >= n_c {
            probe.w[i - n_c] = 0.0;
        }
        adam.reset_feature(i, n_c);
        count += 1;
    }
    if count > 0 {
        log::info!("resampled {count} dead features");
    }
    count
}
