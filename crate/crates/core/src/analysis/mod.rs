//! Feature inspection: top activating samples, board heatmaps, feature and sample clustering,
//! dictionary geometry, cross-model comparison and unwanted-feature flags.

mod cluster;
mod tsne;

pub use cluster::{
    cluster_entropies, cluster_features, cluster_samples, compare_clusterings, nmf, ward, ClusterConfig, ClusterEntropy,
    ClusterReport, ClusterTree, ClusteringComparison, Embedding, FeatureClustering, Merge, Nmf, SampleClustering,
};
pub use tsne::{tsne, TsneConfig};

use std::collections::HashMap;

use ndarray::{Array1, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::chess::{Color, GameHistory};
use crate::csae::CsaeParams;
use crate::dataset::{tapped, RecordMeta, TrajectoryStore};
use crate::error::{Error, Result};
use crate::metrics::{all_entropies, EntropyMode, FeatureActivationTable, MeanStd, Partition, Thresholds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopSample {
    pub sample: usize,
    pub activation: f32,
    pub meta: RecordMeta,
    pub root_fen: Option<String>,
    pub fen: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopSampleSet {
    pub feature: usize,
    /// Activation descending, ties by sample id.
    pub samples: Vec<TopSample>,
}

impl TopSampleSet {
    /// Fills in the root and record boards.
    pub fn with_boards(mut self, store: &TrajectoryStore) -> TopSampleSet {
        let metas: Vec<RecordMeta> = self.samples.iter().map(|s| s.meta).collect();
        for (s, b) in self.samples.iter_mut().zip(store.boards_many(&metas)) {
            if let Some((root, fen)) = b {
                s.root_fen = Some(root);
                s.fen = Some(fen);
            }
        }
        self
    }

    pub fn ids(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.sample).collect()
    }
}

fn top_k_entries(column: Vec<(u32, f32)>, k: usize) -> Vec<(u32, f32)> {
    let mut col = column;
    col.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    col.truncate(k);
    col
}

/// The `k` samples with the largest activation of `feature`; dead features give an empty set.
pub fn top_activating_samples(table: &FeatureActivationTable, feature: usize, k: usize) -> Result<TopSampleSet> {
    if feature >= table.n_features {
        return Err(Error::InvalidInput(format!("feature {feature} outside 0..{}", table.n_features)));
    }
    let samples = top_k_entries(table.column(feature), k)
        .into_iter()
        .map(|(s, v)| TopSample { sample: s as usize, activation: v, meta: table.samples[s as usize], root_fen: None, fen: None })
        .collect();
    Ok(TopSampleSet { feature, samples })
}

/// Top-k sample ids of every feature in one pass over the table.
pub fn top_k_all(table: &FeatureActivationTable, k: usize) -> Vec<Vec<u32>> {
    table.columns().into_iter().map(|c| top_k_entries(c, k).into_iter().map(|(s, _)| s).collect()).collect()
}

/// One board's activations of a feature at every latent pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub feature: usize,
    pub fen: String,
    /// Indexed by latent pixel, the same index stored as a record's square.
    pub cells: Vec<f32>,
    /// Black to move: latent pixel `q` lies on board square `q ^ 56`.
    pub mirrored: bool,
}

impl Heatmap {
    /// Values by board square (a1 = 0, h8 = 63).
    pub fn by_square(&self) -> Vec<f32> {
        let flip = if self.mirrored { 56 } else { 0 };
        (0..64).map(|sq| self.cells[sq ^ flip]).collect()
    }

    /// Rank 8 first, as displayed.
    pub fn grid(&self) -> [[f32; 8]; 8] {
        let b = self.by_square();
        let mut g = [[0.0; 8]; 8];
        for (r, row) in g.iter_mut().enumerate() {
            for (f, v) in row.iter_mut().enumerate() {
                *v = b[(7 - r) * 8 + f];
            }
        }
        g
    }

    pub fn max(&self) -> f32 {
        self.cells.iter().copied().fold(0.0, f32::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedHeatmap {
    pub root: Heatmap,
    pub trajectory: Heatmap,
}

impl PairedHeatmap {
    /// Root and trajectory grids side by side, each scaled to its own maximum as a digit 0-9.
    pub fn render_text(&self) -> String {
        let shade = |h: &Heatmap| {
            let m = h.max();
            h.grid().map(|row| {
                row.map(|v| if m > 0.0 { char::from(b'0' + ((v / m) * 9.0).round().clamp(0.0, 9.0) as u8) } else { '.' })
            })
        };
        let (a, b) = (shade(&self.root), shade(&self.trajectory));
        let mut out = format!("root (max {:.4})     trajectory (max {:.4})\n", self.root.max(), self.trajectory.max());
        for r in 0..8 {
            let left: String = a[r].iter().collect();
            let right: String = b[r].iter().collect();
            out.push_str(&format!("{} {}    {} {}\n", 8 - r, left, 8 - r, right));
        }
        out.push_str("  abcdefgh      abcdefgh\n");
        out
    }
}

fn paired_cells(params: &CsaeParams<f32>, root: &[f32], board: &crate::agent::HiddenState, c: usize, feature: usize) -> Result<Vec<f32>> {
    let mut row = vec![0f32; 2 * c];
    (0..64)
        .map(|q| {
            for ch in 0..c {
                row[ch] = root[ch * 64 + q];
                row[c + ch] = board.get(ch, q);
            }
            Ok(params.encode(ArrayView1::from(&row[..]))?.f[feature])
        })
        .collect()
}

/// Runs the agent on the root and on the board and encodes `[h_root(q); h(q)]` at every
/// latent pixel, as in training. The root map pairs the root with itself.
pub fn feature_heatmap(
    params: &CsaeParams<f32>,
    agent: &Agent,
    layer: usize,
    root: &GameHistory,
    board: &GameHistory,
    feature: usize,
) -> Result<PairedHeatmap> {
    let c = agent.channels();
    if params.dim() != 2 * c {
        return Err(Error::ShapeMismatch(format!("checkpoint width {} vs agent width {}", params.dim(), 2 * c)));
    }
    if feature >= params.n_f() {
        return Err(Error::InvalidInput(format!("feature {feature} outside 0..{}", params.n_f())));
    }
    let h_root = tapped(agent, root, layer)?;
    let h_board = tapped(agent, board, layer)?;
    let map = |h: &GameHistory, cells| Heatmap {
        feature,
        fen: h.current().to_fen(),
        cells,
        mirrored: h.current().side_to_move() == Color::Black,
    };
    Ok(PairedHeatmap {
        root: map(root, paired_cells(params, &h_root.data, &h_root, c, feature)?),
        trajectory: map(board, paired_cells(params, &h_root.data, &h_board, c, feature)?),
    })
}

/// Heatmaps for a stored record.
pub fn record_heatmap(
    params: &CsaeParams<f32>,
    agent: &Agent,
    layer: usize,
    store: &TrajectoryStore,
    meta: &RecordMeta,
    feature: usize,
) -> Result<PairedHeatmap> {
    let (root, board) = store.histories(meta)?;
    feature_heatmap(params, agent, layer, &root, &board, feature)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSimilarity {
    /// `None` when either activation vector is constant.
    pub correlation: Option<f64>,
    pub overlap: f64,
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Shared top-k fraction. The denominator is the larger set size, which is `k` whenever both
/// features have at least `k` active samples.
fn overlap_fraction(a: &[u32], b: &[u32]) -> f64 {
    let denom = a.len().max(b.len());
    if denom == 0 {
        return 0.0;
    }
    a.iter().filter(|s| b.contains(s)).count() as f64 / denom as f64
}

/// Activation correlation over all samples (zeros included) and top-k overlap.
pub fn feature_pair_similarity(
    a: &FeatureActivationTable,
    b: &FeatureActivationTable,
    fa: usize,
    fb: usize,
    k: usize,
) -> Result<PairSimilarity> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("tables of {} and {} samples", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::EmptyTable);
    }
    let va: Vec<f64> = (0..a.len()).map(|s| f64::from(a.activation(s, fa))).collect();
    let vb: Vec<f64> = (0..b.len()).map(|s| f64::from(b.activation(s, fb))).collect();
    let ta = top_activating_samples(a, fa, k)?;
    let tb = top_activating_samples(b, fb, k)?;
    let ids = |t: &TopSampleSet| t.samples.iter().map(|s| s.sample as u32).collect::<Vec<_>>();
    Ok(PairSimilarity { correlation: pearson(&va, &vb), overlap: overlap_fraction(&ids(&ta), &ids(&tb)) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineStats {
    /// `bins + 1` edges over `[-1, 1]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub zero_columns: usize,
    pub pairs: usize,
    pub mean: f64,
    pub mean_abs: f64,
    pub max: f64,
    pub intra: Option<MeanStd>,
    pub extra: Option<MeanStd>,
    /// Spearman correlation between same-cluster membership and similarity.
    pub rank_correlation: Option<f64>,
}

impl CosineStats {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lo,hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], c));
        }
        s
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Pairwise cosine similarities between decoder columns. Above `max_pairs` pairs, a seeded
/// sample of pairs is used. `labels[i]` is the cluster of feature `i`, `None` if unclustered.
pub fn dictionary_cosine_stats(
    params: &CsaeParams<f32>,
    labels: Option<&[Option<usize>]>,
    bins: usize,
    max_pairs: usize,
    seed: u64,
) -> Result<CosineStats> {
    if let Some(l) = labels {
        if l.len() != params.n_f() {
            return Err(Error::ShapeMismatch(format!("{} labels for {} features", l.len(), params.n_f())));
        }
    }
    let bins = bins.max(1);
    let cols: Vec<(usize, Array1<f64>)> = (0..params.n_f())
        .filter_map(|i| {
            let c = params.w_d.column(i).mapv(f64::from);
            let n = c.dot(&c).sqrt();
            (n > 0.0).then(|| (i, c / n))
        })
        .collect();
    let zero_columns = params.n_f() - cols.len();
    let m = cols.len();
    let total = m * m.saturating_sub(1) / 2;
    let pairs: Vec<(usize, usize)> = if total <= max_pairs {
        (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..max_pairs)
            .map(|_| {
                let i = rng.random_range(0..m);
                let mut j = rng.random_range(0..m - 1);
                if j >= i {
                    j += 1;
                }
                (i.min(j), i.max(j))
            })
            .collect()
    };
    let sims: Vec<f64> = pairs.iter().map(|&(i, j)| cols[i].1.dot(&cols[j].1).clamp(-1.0, 1.0)).collect();
    let edges: Vec<f64> = (0..=bins).map(|k| -1.0 + 2.0 * k as f64 / bins as f64).collect();
    let mut counts = vec![0usize; bins];
    for &s in &sims {
        counts[(((s + 1.0) / 2.0 * bins as f64).floor() as usize).min(bins - 1)] += 1;
    }
    let n = sims.len().max(1) as f64;
    let (mut intra, mut extra, mut same, mut paired) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    if let Some(l) = labels {
        for (&(i, j), &s) in pairs.iter().zip(&sims) {
            if let (Some(a), Some(b)) = (l[cols[i].0], l[cols[j].0]) {
                if a == b { intra.push(s) } else { extra.push(s) }
                same.push(if a == b { 1.0 } else { 0.0 });
                paired.push(s);
            }
        }
    }
    Ok(CosineStats {
        edges,
        counts,
        zero_columns,
        pairs: sims.len(),
        mean: sims.iter().sum::<f64>() / n,
        mean_abs: sims.iter().map(|s| s.abs()).sum::<f64>() / n,
        max: sims.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        intra: (!intra.is_empty()).then(|| MeanStd::of(intra)),
        extra: (!extra.is_empty()).then(|| MeanStd::of(extra)),
        rank_correlation: if same.len() > 1 { pearson(&ranks(&same), &ranks(&paired)) } else { None },
    })
}

/// One model in a cross-model comparison, evaluated on the shared sample stream.
pub struct SaeTable<'a> {
    pub tag: String,
    pub layer: usize,
    pub table: &'a FeatureActivationTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSaeEntry {
    pub tag: String,
    pub layer: usize,
    pub mean_l0: f64,
    /// Per reference feature: best top-k overlap in this model, `None` for dead reference features.
    pub best_overlap: Vec<Option<f64>>,
    pub best_match: Vec<Option<usize>>,
    pub summary: MeanStd,
    /// Reference features matched with overlap 1: over-active or universal features.
    pub full_overlap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSaeReport {
    pub reference: String,
    pub k: usize,
    pub entries: Vec<CrossSaeEntry>,
}

fn best_matches(reference: &[Vec<u32>], other: &[Vec<u32>]) -> (Vec<Option<f64>>, Vec<Option<usize>>) {
    let mut holders: HashMap<u32, Vec<usize>> = HashMap::new();
    for (f, top) in other.iter().enumerate() {
        for &s in top {
            holders.entry(s).or_default().push(f);
        }
    }
    reference
        .iter()
        .map(|top| {
            if top.is_empty() {
                return (None, None);
            }
            let mut shared: HashMap<usize, usize> = HashMap::new();
            for s in top {
                for &f in holders.get(s).into_iter().flatten() {
                    *shared.entry(f).or_default() += 1;
                }
            }
            let best = shared
                .into_iter()
                .map(|(f, n)| (f, n as f64 / top.len().max(other[f].len()) as f64))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            match best {
                Some((f, v)) => (Some(v), Some(f)),
                None => (Some(0.0), None),
            }
        })
        .unzip()
}

/// For every feature of `models[reference]`, its best top-k overlap match in each model.
pub fn cross_sae_overlap(models: &[SaeTable<'_>], reference: usize, k: usize) -> Result<CrossSaeReport> {
    let r = models.get(reference).ok_or_else(|| Error::InvalidInput(format!("no model {reference}")))?;
    if let Some(m) = models.iter().find(|m| m.table.len() != r.table.len()) {
        return Err(Error::ShapeMismatch(format!("{} has {} samples, {} has {}", m.tag, m.table.len(), r.tag, r.table.len())));
    }
    let ref_top = top_k_all(r.table, k);
    let entries = models
        .iter()
        .map(|m| {
            let (best_overlap, best_match) = best_matches(&ref_top, &top_k_all(m.table, k));
            let live: Vec<f64> = best_overlap.iter().flatten().copied().collect();
            CrossSaeEntry {
                tag: m.tag.clone(),
                layer: m.layer,
                mean_l0: m.table.mean_l0(),
                full_overlap: live.iter().filter(|&&v| v >= 1.0).count(),
                summary: MeanStd::of(live),
                best_overlap,
                best_match,
            }
        })
        .collect();
    Ok(CrossSaeReport { reference: r.tag.clone(), k, entries })
}

/// A copy of `table` with its samples shuffled, the control for overlap statistics.
pub fn shuffled_samples(table: &FeatureActivationTable, seed: u64) -> Result<FeatureActivationTable> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..table.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut t = table.permuted(&order)?;
    t.samples.clone_from(&table.samples);
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnwantedKind {
    SquareSpecific,
    TrajectorySpecific,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnwantedThresholds {
    pub squares: f64,
    pub trajectories: f64,
}

impl Default for UnwantedThresholds {
    fn default() -> Self {
        UnwantedThresholds { squares: 0.5, trajectories: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnwantedFlag {
    pub feature: usize,
    pub kind: UnwantedKind,
    pub entropy: f64,
}

/// Features whose activations concentrate on few squares or few trajectories. Never-active
/// features have no entropy and are not flagged; square flags also require a live frequency.
pub fn flag_unwanted_features(
    table: &FeatureActivationTable,
    frequency: &Thresholds,
    theta: &UnwantedThresholds,
    mode: EntropyMode,
) -> Vec<UnwantedFlag> {
    let hs = all_entropies(table, Partition::Squares, mode);
    let ht = all_entropies(table, Partition::Trajectories, mode);
    let freq = table.frequencies();
    let mut flags = Vec::new();
    for f in 0..table.n_features {
        if let Some(h) = hs[f] {
            if h < theta.squares && freq[f] >= frequency.dead {
                flags.push(UnwantedFlag { feature: f, kind: UnwantedKind::SquareSpecific, entropy: h });
            }
        }
        if let Some(h) = ht[f] {
            if h < theta.trajectories {
                flags.push(UnwantedFlag { feature: f, kind: UnwantedKind::TrajectorySpecific, entropy: h });
            }
        }
    }
    flags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentConfig;
    use crate::metrics::{FeatureSet, ACTIVATION_EPSILON};
    use crate::sampler::Optimality;
    use ndarray::Array2;

    fn meta(i: usize, square: u8, traj: u64) -> RecordMeta {
        RecordMeta { root_id: i as u64, traj_id: traj, depth: 1, square, flag: if i % 2 == 0 { Optimality::Optimal } else { Optimality::Suboptimal } }
    }

    fn table_from(rows: &[Vec<f32>]) -> FeatureActivationTable {
        let mut t = FeatureActivationTable::new(rows[0].len(), 0, ACTIVATION_EPSILON);
        for (i, r) in rows.iter().enumerate() {
            t.push_dense(meta(i, (i % 64) as u8, i as u64), r).unwrap();
        }
        t
    }

    #[test]
    fn top_k_matches_full_sort_and_breaks_ties_by_id() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f32>> =
            (0..1000).map(|_| vec![if rng.random_bool(0.3) { (rng.random_range(1..20) as f32) * 0.5 } else { 0.0 }]).collect();
        let t = table_from(&rows);
        let got = top_activating_samples(&t, 0, 16).unwrap();
        let mut oracle: Vec<(usize, f32)> = rows.iter().enumerate().filter(|(_, r)| r[0] > 0.0).map(|(i, r)| (i, r[0])).collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        oracle.truncate(16);
        assert_eq!(got.samples.iter().map(|s| (s.sample, s.activation)).collect::<Vec<_>>(), oracle);

        let few = table_from(&[vec![0.0], vec![2.0], vec![1.0]]);
        assert_eq!(top_activating_samples(&few, 0, 16).unwrap().ids(), vec![1, 2]);
        let mut more = few.clone();
        more.push_dense(meta(3, 0, 3), &[5.0]).unwrap();
        assert_eq!(top_activating_samples(&more, 0, 16).unwrap().ids()[0], 3);
        assert!(top_activating_samples(&table_from(&[vec![0.0]]), 0, 4).unwrap().samples.is_empty());
        assert!(top_activating_samples(&few, 1, 4).is_err());
    }

    #[test]
    fn planted_feature_top_16() {
        let planted: Vec<usize> = (0..16).map(|i| 7 + 31 * i).collect();
        let rows: Vec<Vec<f32>> = (0..600)
            .map(|i| match planted.iter().position(|&p| p == i) {
                Some(r) => vec![10.0 + r as f32],
                None => vec![if i % 3 == 0 { 1.0 } else { 0.0 }],
            })
            .collect();
        let mut ids = top_activating_samples(&table_from(&rows), 0, 16).unwrap().ids();
        ids.sort_unstable();
        assert_eq!(ids, planted);
    }

    #[test]
    fn pair_similarity_cases() {
        let t = table_from(&[vec![1.0, 0.0, 2.0], vec![2.0, 0.0, 0.0], vec![0.0, 3.0, 1.0], vec![4.0, 0.0, 0.0], vec![0.0, 1.0, 5.0]]);
        let same = feature_pair_similarity(&t, &t, 0, 0, 2).unwrap();
        assert!((same.correlation.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(same.overlap, 1.0);
        // Feature 0 = (1,2,0,4,0), feature 1 = (0,0,3,0,1): means 1.4 and 0.8,
        // covariance sum -5.6, variances 11.2 and 6.8.
        let s = feature_pair_similarity(&t, &t, 0, 1, 2).unwrap();
        assert!((s.correlation.unwrap() - (-5.6 / (11.2f64 * 6.8).sqrt())).abs() < 1e-9);
        assert_eq!(s.overlap, 0.0);
        let flat = table_from(&[vec![1.0], vec![1.0]]);
        assert_eq!(feature_pair_similarity(&flat, &flat, 0, 0, 1).unwrap().correlation, None);
    }

    #[test]
    fn cosine_stats_cases() {
        let mut p = CsaeParams::<f32>::init(4, 4, 0, 0).unwrap();
        p.w_d = Array2::eye(4);
        let s = dictionary_cosine_stats(&p, None, 20, 1_000_000, 0).unwrap();
        assert_eq!(s.pairs, 6);
        assert!(s.mean_abs.abs() < 1e-12);
        let first = p.w_d.column(0).to_owned();
        p.w_d.column_mut(3).assign(&first);
        p.w_d.column_mut(2).fill(0.0);
        let s = dictionary_cosine_stats(&p, None, 20, 1_000_000, 0).unwrap();
        assert_eq!(s.zero_columns, 1);
        assert!((s.max - 1.0).abs() < 1e-9);
        assert_eq!(*s.counts.last().unwrap(), 1);

        let rand = CsaeParams::<f32>::init(64, 200, 0, 9).unwrap();
        let s = dictionary_cosine_stats(&rand, None, 40, 1_000_000, 0).unwrap();
        // E|cos| for random unit vectors in 64 dims is about sqrt(2 / (pi * 64)).
        assert!((s.mean_abs - 0.1).abs() < 0.05, "{}", s.mean_abs);
        let capped = dictionary_cosine_stats(&rand, None, 40, 500, 1).unwrap();
        assert_eq!(capped.pairs, 500);

        let labels: Vec<Option<usize>> = (0..200).map(|i| Some(i % 4)).collect();
        let s = dictionary_cosine_stats(&rand, Some(&labels), 40, 1_000_000, 0).unwrap();
        assert!(s.intra.is_some() && s.extra.is_some());
        assert!(s.rank_correlation.unwrap().abs() < 0.1);
    }

    #[test]
    fn cross_overlap_self_and_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<Vec<f32>> =
            (0..300).map(|_| (0..6).map(|_| if rng.random_bool(0.2) { rng.random_range(0.1..2.0) } else { 0.0 }).collect()).collect();
        let a = table_from(&rows);
        let perm = [3, 5, 0, 1, 4, 2];
        let b = table_from(&rows.iter().map(|r| (0..6).map(|j| r[perm[j]]).collect()).collect::<Vec<_>>());
        let models = [
            SaeTable { tag: "a".into(), layer: 1, table: &a },
            SaeTable { tag: "b".into(), layer: 1, table: &b },
        ];
        let r = cross_sae_overlap(&models, 0, 8).unwrap();
        assert!(r.entries[0].best_overlap.iter().all(|v| *v == Some(1.0)));
        assert_eq!(r.entries[0].best_match, (0..6).map(Some).collect::<Vec<_>>());
        for f in 0..6 {
            assert_eq!(r.entries[1].best_match[perm[f]], Some(f));
        }
        let shuffled = shuffled_samples(&a, 3).unwrap();
        let models = [models[0].clone_ref(), SaeTable { tag: "s".into(), layer: 1, table: &shuffled }];
        let c = cross_sae_overlap(&models, 0, 8).unwrap();
        assert!(c.entries[1].summary.mean < 1.0);
    }

    impl SaeTable<'_> {
        fn clone_ref(&self) -> SaeTable<'_> {
            SaeTable { tag: self.tag.clone(), layer: self.layer, table: self.table }
        }
    }

    #[test]
    fn unwanted_flags() {
        let mut t = FeatureActivationTable::new(3, 0, ACTIVATION_EPSILON);
        for i in 0..64usize {
            let only_a1 = if i % 8 == 0 { 1.0 } else { 0.0 };
            let one_traj = if i < 4 { 1.0 } else { 0.0 };
            t.push_dense(RecordMeta { root_id: 0, traj_id: (i / 4) as u64, depth: 1, square: if i % 8 == 0 { 0 } else { i as u8 }, flag: Optimality::Optimal }, &[only_a1, one_traj, 1.0])
                .unwrap();
        }
        let flags = flag_unwanted_features(&t, &Thresholds::default(), &UnwantedThresholds::default(), EntropyMode::Mass);
        assert!(flags.contains(&UnwantedFlag { feature: 0, kind: UnwantedKind::SquareSpecific, entropy: 0.0 }));
        assert!(flags.iter().any(|f| f.feature == 1 && f.kind == UnwantedKind::TrajectorySpecific));
        assert!(flags.iter().all(|f| f.feature != 2));
    }

    #[test]
    fn sample_clustering_recovers_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut t = FeatureActivationTable::new(10, 4, ACTIVATION_EPSILON);
        for i in 0..120usize {
            let blob = i % 2;
            let row: Vec<f32> =
                (0..10).map(|j| if (j < 5) == (blob == 0) { 1.0 + rng.random_range(0.0..0.3) } else { rng.random_range(0.0..0.05) }).collect();
            t.push_dense(meta(i, i as u8 % 64, i as u64), &row).unwrap();
        }
        let cfg = ClusterConfig { n_components: 4, n_clusters: 2, embed_points: 40, ..ClusterConfig::default() };
        let cfg = ClusterConfig { tsne: TsneConfig { iterations: 100, perplexity: 5.0, ..cfg.tsne }, ..cfg };
        let r = cluster_samples(&t, FeatureSet::F, &cfg).unwrap();
        assert!(r.labels.iter().enumerate().all(|(i, &l)| l == r.labels[i % 2]));
        assert_ne!(r.labels[0], r.labels[1]);
        assert_eq!(r.embedding.as_ref().unwrap().coords.len(), 40);
        assert_eq!(cluster_samples(&t, FeatureSet::F, &cfg).unwrap(), r);

        let singletons = cluster_samples(&t, FeatureSet::F, &ClusterConfig { n_clusters: 120, embed_points: 0, ..cfg.clone() }).unwrap();
        let rep = cluster_entropies(&singletons.labels, &t.samples).unwrap();
        assert_eq!(rep.clusters.len(), 120);
        assert!(rep.clusters.iter().all(|c| c.h_squares == 0.0 && c.h_optimality == 0.0 && c.h_trajectories == 0.0));
        assert!(matches!(cluster_samples(&FeatureActivationTable::new(2, 0, 0.0), FeatureSet::F, &cfg), Err(Error::EmptyTable)));
    }

    #[test]
    fn feature_clustering_groups_and_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut t = FeatureActivationTable::new(9, 0, ACTIVATION_EPSILON);
        for i in 0..200usize {
            let g = i % 2 == 0;
            let mut row: Vec<f32> = (0..8).map(|j| if (j < 4) == g { rng.random_range(0.5..1.5) } else { 0.0 }).collect();
            row.push(row[0]);
            t.push_dense(meta(i, 0, 0), &row).unwrap();
        }
        let cfg = ClusterConfig { n_components: 3, n_clusters: 2, ..ClusterConfig::default() };
        let r = cluster_features(&t, FeatureSet::F, &cfg).unwrap();
        assert_eq!(r.tree.n_leaves(), 9);
        let first = r.tree.merges[0];
        assert_eq!((first.a, first.b, first.distance), (0, 8, 0.0));
        let group = |f: usize| r.labels[r.features.iter().position(|&x| x == f).unwrap()];
        assert!((0..4).chain([8]).all(|f| group(f) == group(0)));
        assert!((4..8).all(|f| group(f) == group(4)));
        assert_ne!(group(0), group(4));
        let mut dead = FeatureActivationTable::new(3, 0, ACTIVATION_EPSILON);
        dead.push_dense(meta(0, 0, 0), &[1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(cluster_features(&dead, FeatureSet::F, &cfg), Err(Error::TooFewFeatures { found: 1, .. })));
    }

    fn heat(cells: Vec<f32>, mirrored: bool) -> Heatmap {
        Heatmap { feature: 0, fen: String::new(), cells, mirrored }
    }

    #[test]
    fn heatmap_orientation_and_render() {
        let mut cells = vec![0.0; 64];
        cells[0] = 1.0;
        let white = heat(cells.clone(), false);
        assert_eq!(white.grid()[7][0], 1.0);
        let black = heat(cells, true);
        assert_eq!(black.by_square()[56], 1.0);
        assert_eq!(black.grid()[0][0], 1.0);
        let mut half = vec![0.0; 64];
        half[63] = 2.0;
        half[62] = 1.0;
        let pair = PairedHeatmap { root: white, trajectory: heat(half, false) };
        let golden = concat!(
            "root (max 1.0000)     trajectory (max 2.0000)\n",
            "8 00000000    8 00000059\n",
            "7 00000000    7 00000000\n",
            "6 00000000    6 00000000\n",
            "5 00000000    5 00000000\n",
            "4 00000000    4 00000000\n",
            "3 00000000    3 00000000\n",
            "2 00000000    2 00000000\n",
            "1 90000000    1 00000000\n",
            "  abcdefgh      abcdefgh\n",
        );
        assert_eq!(pair.render_text(), golden);
        assert_eq!(PairedHeatmap { root: heat(vec![0.0; 64], false), ..pair }.render_text().lines().nth(1).unwrap(), "8 ........    8 00000059");
    }

    #[test]
    fn heatmap_matches_stored_activation() {
        let agent = Agent::seeded(&AgentConfig { channels: 4, blocks: 2, material_prior: true }, 4).unwrap();
        let params = CsaeParams::<f32>::init(8, 12, 4, 1).unwrap();
        let root = GameHistory::from_uci(crate::chess::BoardState::start(), &["e2e4".to_string()]).unwrap();
        let mut board = root.clone();
        board.push("e7e5".parse().unwrap()).unwrap();
        let h_root = tapped(&agent, &root, 1).unwrap();
        let h = tapped(&agent, &board, 1).unwrap();
        let q = 27;
        let mut row = h_root.at_square(q);
        row.extend(h.at_square(q));
        let f = params.encode(ArrayView1::from(&row[..])).unwrap().f;
        let maps = feature_heatmap(&params, &agent, 1, &root, &board, 5).unwrap();
        assert!((maps.trajectory.cells[q] - f[5]).abs() < 1e-5);
        assert!(maps.root.mirrored && !maps.trajectory.mirrored);
        assert!(maps.root.cells.iter().chain(&maps.trajectory.cells).all(|&v| v >= 0.0));

        let mut dead = params.clone();
        dead.w_e.row_mut(5).fill(0.0);
        dead.b_e[5] = -1.0;
        let maps = feature_heatmap(&dead, &agent, 1, &root, &board, 5).unwrap();
        assert!(maps.trajectory.cells.iter().chain(&maps.root.cells).all(|&v| v == 0.0));
        let wrong = CsaeParams::<f32>::init(6, 4, 1, 0).unwrap();
        assert!(matches!(feature_heatmap(&wrong, &agent, 1, &root, &board, 0), Err(Error::ShapeMismatch(_))));
    }
}
