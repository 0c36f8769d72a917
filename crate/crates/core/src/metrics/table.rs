//! Sparse feature activation table.

use std::ops::Range;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::csae::CsaeParams;
use crate::dataset::{PairSet, RecordMeta};
use crate::error::{Error, Result};
use crate::sampler::Optimality;

/// Activations at or below this value count as inactive.
pub const ACTIVATION_EPSILON: f32 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    C,
    D,
    F,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 3] = [FeatureSet::C, FeatureSet::D, FeatureSet::F];

    pub fn range(self, n_features: usize, n_c: usize) -> Range<usize> {
        match self {
            FeatureSet::C => 0..n_c,
            FeatureSet::D => n_c..n_features,
            FeatureSet::F => 0..n_features,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::C => "c",
            FeatureSet::D => "d",
            FeatureSet::F => "f",
        }
    }

    pub fn parse(s: &str) -> Result<FeatureSet> {
        match s {
            "c" => Ok(FeatureSet::C),
            "d" => Ok(FeatureSet::D),
            "f" => Ok(FeatureSet::F),
            _ => Err(Error::Parse(format!("unknown feature set {s:?} (expected c, d or f)"))),
        }
    }
}

/// Row-compressed sample × feature activations, storing only values above the threshold,
/// with the metadata of every sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureActivationTable {
    pub n_features: usize,
    pub n_c: usize,
    pub epsilon: f32,
    pub samples: Vec<RecordMeta>,
    offsets: Vec<usize>,
    ids: Vec<u32>,
    values: Vec<f32>,
}

impl FeatureActivationTable {
    pub fn new(n_features: usize, n_c: usize, epsilon: f32) -> FeatureActivationTable {
        FeatureActivationTable { n_features, n_c, epsilon, samples: Vec::new(), offsets: vec![0], ids: Vec::new(), values: Vec::new() }
    }

    pub fn push_dense(&mut self, meta: RecordMeta, f: &[f32]) -> Result<()> {
        if f.len() != self.n_features {
            return Err(Error::ShapeMismatch(format!("{} activations for {} features", f.len(), self.n_features)));
        }
        for (i, &v) in f.iter().enumerate() {
            if v > self.epsilon {
                self.ids.push(i as u32);
                self.values.push(v);
            }
        }
        self.offsets.push(self.ids.len());
        self.samples.push(meta);
        Ok(())
    }

    /// Appends a sample given as ascending `(ids, values)`; values at or below epsilon are dropped.
    pub fn push_sparse(&mut self, meta: RecordMeta, ids: &[u32], values: &[f32]) -> Result<()> {
        if ids.len() != values.len() || ids.windows(2).any(|w| w[0] >= w[1]) || ids.last().is_some_and(|&i| i as usize >= self.n_features) {
            return Err(Error::InvalidInput("sparse sample ids must be ascending and in range".into()));
        }
        for (&i, &v) in ids.iter().zip(values) {
            if v > self.epsilon {
                self.ids.push(i);
                self.values.push(v);
            }
        }
        self.offsets.push(self.ids.len());
        self.samples.push(meta);
        Ok(())
    }

    /// The same samples reordered: sample `i` of the result is sample `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Result<FeatureActivationTable> {
        let mut t = FeatureActivationTable::new(self.n_features, self.n_c, self.epsilon);
        for &s in order {
            if s >= self.len() {
                return Err(Error::InvalidInput(format!("sample {s} out of range")));
            }
            let (ids, vals) = self.sample(s);
            t.push_sparse(self.samples[s], ids, vals)?;
        }
        Ok(t)
    }

    /// Appends rows of a dense `samples × n_features` matrix.
    pub fn extend_dense(&mut self, metas: &[RecordMeta], f: ArrayView2<'_, f32>) -> Result<()> {
        if metas.len() != f.nrows() {
            return Err(Error::ShapeMismatch(format!("{} metadata rows for {} activation rows", metas.len(), f.nrows())));
        }
        for (m, row) in metas.iter().zip(f.rows()) {
            self.push_dense(*m, &row.to_vec())?;
        }
        Ok(())
    }

    /// Encodes every `[h_root; h_traj]` record of a split.
    pub fn from_pair_set(params: &CsaeParams<f32>, set: &PairSet, epsilon: f32) -> Result<FeatureActivationTable> {
        if params.dim() != set.dim() {
            return Err(Error::ShapeMismatch(format!("model width {} vs dataset width {}", params.dim(), set.dim())));
        }
        let rows = ArrayView2::from_shape((set.len(), set.dim()), &set.data).expect("pair set rows");
        FeatureActivationTable::from_rows(params, rows, &set.meta, epsilon)
    }

    /// Encodes arbitrary input rows carrying the given metadata.
    pub fn from_rows(
        params: &CsaeParams<f32>,
        rows: ArrayView2<'_, f32>,
        metas: &[RecordMeta],
        epsilon: f32,
    ) -> Result<FeatureActivationTable> {
        let mut t = FeatureActivationTable::new(params.n_f(), params.n_c(), epsilon);
        for (chunk, meta) in rows.axis_chunks_iter(Axis(0), 4096).zip(metas.chunks(4096)) {
            let f = params.encode_batch(chunk)?;
            t.extend_dense(meta, f.view())?;
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Active `(feature ids, values)` of one sample, ids ascending.
    pub fn sample(&self, i: usize) -> (&[u32], &[f32]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.ids[r.clone()], &self.values[r])
    }

    pub fn activation(&self, sample: usize, feature: usize) -> f32 {
        let (ids, vals) = self.sample(sample);
        ids.binary_search(&(feature as u32)).map_or(0.0, |k| vals[k])
    }

    /// Column view: for every feature, its `(sample, value)` entries in sample order.
    pub fn columns(&self) -> Vec<Vec<(u32, f32)>> {
        let mut cols = vec![Vec::new(); self.n_features];
        for s in 0..self.len() {
            let (ids, vals) = self.sample(s);
            for (&f, &v) in ids.iter().zip(vals) {
                cols[f as usize].push((s as u32, v));
            }
        }
        cols
    }

    pub fn column(&self, feature: usize) -> Vec<(u32, f32)> {
        (0..self.len())
            .filter_map(|s| {
                let v = self.activation(s, feature);
                (v > 0.0).then_some((s as u32, v))
            })
            .collect()
    }

    pub fn active_counts(&self) -> Vec<u64> {
        let mut c = vec![0u64; self.n_features];
        for &f in &self.ids {
            c[f as usize] += 1;
        }
        c
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        self.active_counts().into_iter().map(|c| c as f64 / n).collect()
    }

    /// Mean activation over all samples (inactive samples contribute zero).
    pub fn mean_activations(&self) -> Vec<f64> {
        let mut m = vec![0f64; self.n_features];
        for (&f, &v) in self.ids.iter().zip(&self.values) {
            m[f as usize] += f64::from(v);
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|x| *x /= n);
        m
    }

    pub fn range(&self, set: FeatureSet) -> Range<usize> {
        set.range(self.n_features, self.n_c)
    }

    /// Dense `samples × |features|` matrix over the listed features.
    pub fn dense(&self, features: &[usize]) -> Array2<f64> {
        let mut pos = vec![usize::MAX; self.n_features];
        for (k, &f) in features.iter().enumerate() {
            pos[f] = k;
        }
        let mut out = Array2::zeros((self.len(), features.len()));
        for s in 0..self.len() {
            let (ids, vals) = self.sample(s);
            for (&f, &v) in ids.iter().zip(vals) {
                let k = pos[f as usize];
                if k != usize::MAX {
                    out[[s, k]] = f64::from(v);
                }
            }
        }
        out
    }

    pub fn labels(&self) -> Vec<bool> {
        self.samples.iter().map(|m| m.flag == Optimality::Optimal).collect()
    }

    /// Mean number of active features per sample.
    pub fn mean_l0(&self) -> f64 {
        self.ids.len() as f64 / self.len().max(1) as f64
    }
}
