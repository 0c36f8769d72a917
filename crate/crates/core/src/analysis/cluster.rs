//! NMF, Ward clustering, cluster entropies and clustering comparison.

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tsne::{tsne, TsneConfig};
use crate::dataset::RecordMeta;
use crate::digest::derive_seed;
use crate::error::{Error, Result};
use crate::metrics::{entropy, FeatureActivationTable, FeatureSet, MeanStd};

#[derive(Debug, Clone, PartialEq)]
pub struct Nmf {
    /// `n × k` codes.
    pub w: Array2<f64>,
    /// `k × m` components.
    pub h: Array2<f64>,
    /// Frobenius reconstruction error after each iteration.
    pub errors: Vec<f64>,
}

/// Lee-Seung multiplicative updates for `X ≈ W H` under the Frobenius norm, with a seeded
/// uniform initialization scaled to the data mean.
pub fn nmf(x: ArrayView2<'_, f64>, k: usize, iterations: usize, seed: u64) -> Result<Nmf> {
    let (n, m) = x.dim();
    if n == 0 || m == 0 {
        return Err(Error::EmptyTable);
    }
    if x.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidInput("NMF input must be finite and nonnegative".into()));
    }
    let k = k.clamp(1, n.min(m));
    let mean = x.mean().unwrap_or(0.0).max(1e-12);
    let scale = (mean / k as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Array2::from_shape_fn((n, k), |_| scale * rng.random_range(0.01..1.0));
    let mut h = Array2::from_shape_fn((k, m), |_| scale * rng.random_range(0.01..1.0));
    let eps = 1e-12;
    let mut errors = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let num = w.t().dot(&x);
        let den = w.t().dot(&w).dot(&h);
        ndarray::Zip::from(&mut h).and(&num).and(&den).for_each(|h, &a, &b| *h *= a / (b + eps));
        let num = x.dot(&h.t());
        let den = w.dot(&h.dot(&h.t()));
        ndarray::Zip::from(&mut w).and(&num).and(&den).for_each(|w, &a, &b| *w *= a / (b + eps));
        let r = &x - &w.dot(&h);
        errors.push(r.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok(Nmf { w, h, errors })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Ids below `n_leaves` are leaves; merge `i` creates cluster `n_leaves + i`.
    pub a: usize,
    pub b: usize,
    pub distance: f64,
    pub size: usize,
}

/// An agglomerative linkage over `leaves` (item ids in the clustered universe).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTree {
    pub leaves: Vec<usize>,
    pub merges: Vec<Merge>,
}

impl ClusterTree {
    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Flat labels (by leaf position) after undoing the top `n_clusters − 1` merges.
    /// Labels are numbered in order of each cluster's first leaf.
    pub fn cut(&self, n_clusters: usize) -> Vec<usize> {
        let n = self.n_leaves();
        let keep = n.saturating_sub(n_clusters.clamp(1, n.max(1)));
        let mut parent: Vec<usize> = (0..n + self.merges.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (i, m) in self.merges.iter().take(keep).enumerate() {
            let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
            parent[ra] = n + i;
            parent[rb] = n + i;
        }
        let mut ids = HashMap::new();
        (0..n)
            .map(|leaf| {
                let r = find(&mut parent, leaf);
                let next = ids.len();
                *ids.entry(r).or_insert(next)
            })
            .collect()
    }

    /// Columnar text `child_a,child_b,distance,size`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("child_a,child_b,distance,size\n");
        for m in &self.merges {
            s.push_str(&format!("{},{},{},{}\n", m.a, m.b, m.distance, m.size));
        }
        s
    }

    /// Nested `{id, distance, size, children}` tree; leaves carry `item`.
    pub fn to_json_tree(&self) -> serde_json::Value {
        let n = self.n_leaves();
        let mut nodes: Vec<Option<serde_json::Value>> = self
            .leaves
            .iter()
            .enumerate()
            .map(|(i, &item)| Some(serde_json::json!({ "id": i, "item": item, "size": 1, "distance": 0.0 })))
            .collect();
        for (i, m) in self.merges.iter().enumerate() {
            let a = nodes[m.a].take().unwrap_or(serde_json::Value::Null);
            let b = nodes[m.b].take().unwrap_or(serde_json::Value::Null);
            nodes.push(Some(serde_json::json!({
                "id": n + i, "distance": m.distance, "size": m.size, "children": [a, b]
            })));
        }
        nodes.pop().flatten().unwrap_or(serde_json::Value::Null)
    }
}

/// Ward linkage on Euclidean distances between the rows of `x`.
pub fn ward(x: ArrayView2<'_, f64>, leaves: Vec<usize>) -> Result<ClusterTree> {
    let n = x.nrows();
    if n != leaves.len() {
        return Err(Error::ShapeMismatch(format!("{n} rows for {} leaves", leaves.len())));
    }
    if n < 2 {
        return Ok(ClusterTree { leaves, merges: Vec::new() });
    }
    let mut condensed = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            condensed.push(d.sqrt());
        }
    }
    let dend = kodama::linkage(&mut condensed, n, kodama::Method::Ward);
    let merges = dend
        .steps()
        .iter()
        .map(|s| Merge { a: s.cluster1, b: s.cluster2, distance: s.dissimilarity, size: s.size })
        .collect();
    Ok(ClusterTree { leaves, merges })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub n_components: usize,
    pub n_clusters: usize,
    pub nmf_iterations: usize,
    /// Samples beyond this count are subsampled (seeded) before clustering.
    pub max_samples: usize,
    /// Cluster on active/inactive indicators instead of activation values.
    pub binarize: bool,
    /// Points embedded for display; 0 disables the embedding.
    pub embed_points: usize,
    pub tsne: TsneConfig,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            n_components: 32,
            n_clusters: 100,
            nmf_iterations: 200,
            max_samples: 4000,
            binarize: false,
            embed_points: 1000,
            tsne: TsneConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    /// Positions into the clustered item list.
    pub points: Vec<usize>,
    pub coords: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleClustering {
    pub set: FeatureSet,
    /// Clustered sample ids; `labels[i]` belongs to `samples[i]`.
    pub samples: Vec<usize>,
    pub labels: Vec<usize>,
    pub tree: ClusterTree,
    pub embedding: Option<Embedding>,
}

fn subsample(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, cap).into_vec();
    idx.sort_unstable();
    idx
}

fn feature_matrix(table: &FeatureActivationTable, set: FeatureSet, samples: &[usize], binarize: bool) -> Array2<f64> {
    let feats: Vec<usize> = table.range(set).collect();
    let full = table.dense(&feats);
    let mut x = full.select(Axis(0), samples);
    if binarize {
        x.mapv_inplace(|v| if v > 0.0 { 1.0 } else { 0.0 });
    }
    x
}

fn embed(codes: &Array2<f64>, cfg: &ClusterConfig) -> Result<Option<Embedding>> {
    if cfg.embed_points == 0 || codes.nrows() < 3 {
        return Ok(None);
    }
    let points = subsample(codes.nrows(), cfg.embed_points, derive_seed(cfg.seed, 3));
    let y = tsne(codes.select(Axis(0), &points).view(), &TsneConfig { seed: derive_seed(cfg.seed, 4), ..cfg.tsne })?;
    Ok(Some(Embedding { points, coords: y.rows().into_iter().map(|r| [r[0], r[1]]).collect() }))
}

/// NMF of the sample × feature activation matrix, Ward clustering of the NMF codes and a
/// flat cut. The optional t-SNE embedding is for display only.
pub fn cluster_samples(table: &FeatureActivationTable, set: FeatureSet, cfg: &ClusterConfig) -> Result<SampleClustering> {
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    let samples = subsample(table.len(), cfg.max_samples, derive_seed(cfg.seed, 0));
    let x = feature_matrix(table, set, &samples, cfg.binarize);
    let codes = nmf(x.view(), cfg.n_components, cfg.nmf_iterations, derive_seed(cfg.seed, 1))?.w;
    let tree = ward(codes.view(), samples.clone())?;
    let labels = tree.cut(cfg.n_clusters);
    let embedding = embed(&codes, cfg)?;
    Ok(SampleClustering { set, samples, labels, tree, embedding })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureClustering {
    pub set: FeatureSet,
    /// Live feature ids (global indices); `labels[i]` belongs to `features[i]`.
    pub features: Vec<usize>,
    pub labels: Vec<usize>,
    pub tree: ClusterTree,
}

/// Clusters live features by their activation patterns over samples: NMF of the feature ×
/// sample matrix, then Ward on the codes.
pub fn cluster_features(table: &FeatureActivationTable, set: FeatureSet, cfg: &ClusterConfig) -> Result<FeatureClustering> {
    let counts = table.active_counts();
    let features: Vec<usize> = table.range(set).filter(|&f| counts[f] > 0).collect();
    if features.len() < 2 {
        return Err(Error::TooFewFeatures { needed: 2, found: features.len() });
    }
    let samples = subsample(table.len(), cfg.max_samples, derive_seed(cfg.seed, 0));
    let mut x = table.dense(&features).select(Axis(0), &samples).reversed_axes();
    if cfg.binarize {
        x.mapv_inplace(|v| if v > 0.0 { 1.0 } else { 0.0 });
    }
    let codes = nmf(x.view(), cfg.n_components, cfg.nmf_iterations, derive_seed(cfg.seed, 2))?.w;
    let tree = ward(codes.view(), features.clone())?;
    let labels = tree.cut(cfg.n_clusters.min(features.len()));
    Ok(FeatureClustering { set, features, labels, tree })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterEntropy {
    pub label: usize,
    pub size: usize,
    pub h_squares: f64,
    pub h_optimality: f64,
    pub h_trajectories: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub clusters: Vec<ClusterEntropy>,
    pub h_squares: MeanStd,
    pub h_optimality: MeanStd,
    pub h_trajectories: MeanStd,
}

/// Natural-log entropies of the square, optimality and trajectory distributions inside
/// every cluster, summarized as mean ± std over clusters.
pub fn cluster_entropies(labels: &[usize], metas: &[RecordMeta]) -> Result<ClusterReport> {
    if labels.len() != metas.len() {
        return Err(Error::ShapeMismatch(format!("{} labels for {} samples", labels.len(), metas.len())));
    }
    type Counts = (BTreeMap<u8, f64>, BTreeMap<bool, f64>, BTreeMap<u64, f64>);
    let mut by: BTreeMap<usize, Counts> = BTreeMap::new();
    for (&l, m) in labels.iter().zip(metas) {
        let e = by.entry(l).or_default();
        *e.0.entry(m.square).or_default() += 1.0;
        *e.1.entry(m.flag == crate::sampler::Optimality::Optimal).or_default() += 1.0;
        *e.2.entry(m.traj_id).or_default() += 1.0;
    }
    let clusters: Vec<ClusterEntropy> = by
        .into_iter()
        .map(|(label, (s, o, t))| ClusterEntropy {
            label,
            size: s.values().sum::<f64>() as usize,
            h_squares: entropy(s.into_values()).unwrap_or(0.0),
            h_optimality: entropy(o.into_values()).unwrap_or(0.0),
            h_trajectories: entropy(t.into_values()).unwrap_or(0.0),
        })
        .collect();
    Ok(ClusterReport {
        h_squares: MeanStd::of(clusters.iter().map(|c| c.h_squares)),
        h_optimality: MeanStd::of(clusters.iter().map(|c| c.h_optimality)),
        h_trajectories: MeanStd::of(clusters.iter().map(|c| c.h_trajectories)),
        clusters,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringComparison {
    /// For each cluster of A (ascending label), its best Pearson correlation with a B cluster.
    pub max_a: Vec<f64>,
    pub max_b: Vec<f64>,
    /// Mean over both lists.
    pub mean: f64,
}

/// Pearson correlation between cluster indicator vectors, from the contingency table.
/// Clusters covering every sample have no variance and are skipped.
pub fn compare_clusterings(a: &[usize], b: &[usize]) -> Result<ClusteringComparison> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("labelings of {} and {} samples", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::EmptyTable);
    }
    let n = a.len() as f64;
    let mut size_a: BTreeMap<usize, f64> = BTreeMap::new();
    let mut size_b: BTreeMap<usize, f64> = BTreeMap::new();
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *size_a.entry(x).or_default() += 1.0;
        *size_b.entry(y).or_default() += 1.0;
        *joint.entry((x, y)).or_default() += 1.0;
    }
    let corr = |i: usize, si: f64, j: usize, sj: f64, swap: bool| {
        let key = if swap { (j, i) } else { (i, j) };
        let nij = joint.get(&key).copied().unwrap_or(0.0);
        (n * nij - si * sj) / (si * (n - si) * sj * (n - sj)).sqrt()
    };
    let maxima = |xs: &BTreeMap<usize, f64>, ys: &BTreeMap<usize, f64>, swap: bool| -> Vec<f64> {
        xs.iter()
            .filter(|&(_, &s)| s < n)
            .map(|(&i, &si)| {
                ys.iter()
                    .filter(|&(_, &s)| s < n)
                    .map(|(&j, &sj)| corr(i, si, j, sj, swap))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .filter(|v| v.is_finite())
            .collect()
    };
    let max_a = maxima(&size_a, &size_b, false);
    let max_b = maxima(&size_b, &size_a, true);
    let all: Vec<f64> = max_a.iter().chain(&max_b).copied().collect();
    let mean = if all.is_empty() { 0.0 } else { all.iter().sum::<f64>() / all.len() as f64 };
    Ok(ClusteringComparison { max_a, max_b, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::Optimality;
    use ndarray::array;

    #[test]
    fn nmf_is_nonnegative_and_descends() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((30, 12), |_| rng.random_range(0.0..1.0f64));
        let r = nmf(x.view(), 4, 100, 7).unwrap();
        assert!(r.w.iter().chain(&r.h).all(|&v| v >= 0.0));
        assert!(r.errors.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
        assert_eq!(nmf(x.view(), 4, 100, 7).unwrap(), r);
        assert!(nmf(array![[-1.0]].view(), 1, 1, 0).is_err());
    }

    #[test]
    fn ward_merges_identical_rows_first_and_cuts() {
        let x = array![[0.0, 0.0], [10.0, 10.0], [0.0, 0.0], [10.0, 10.5], [0.2, 0.0]];
        let t = ward(x.view(), vec![10, 11, 12, 13, 14]).unwrap();
        assert_eq!(t.merges.len(), 4);
        assert_eq!((t.merges[0].a, t.merges[0].b, t.merges[0].distance), (0, 2, 0.0));
        assert!(t.merges.windows(2).all(|w| w[0].distance <= w[1].distance));
        assert_eq!(t.cut(2), vec![0, 1, 0, 1, 0]);
        assert_eq!(t.cut(5), vec![0, 1, 2, 3, 4]);
        assert_eq!(t.cut(1), vec![0; 5]);
        assert!(t.to_csv().lines().count() == 5);
        let tree = t.to_json_tree();
        assert_eq!(tree["size"], 5);
    }

    #[test]
    fn cluster_entropy_cases() {
        let meta = |sq: u8, traj: u64, opt: bool| RecordMeta {
            root_id: 0,
            traj_id: traj,
            depth: 1,
            square: sq,
            flag: if opt { Optimality::Optimal } else { Optimality::Suboptimal },
        };
        let metas = [meta(3, 1, true), meta(3, 2, false), meta(4, 1, true), meta(5, 1, true)];
        let r = cluster_entropies(&[0, 0, 1, 1], &metas).unwrap();
        assert_eq!(r.clusters[0].h_squares, 0.0);
        assert!((r.clusters[0].h_optimality - 2f64.ln()).abs() < 1e-12);
        assert_eq!(r.clusters[1].h_optimality, 0.0);
        assert!((r.clusters[1].h_squares - 2f64.ln()).abs() < 1e-12);
        let singletons = cluster_entropies(&[0, 1, 2, 3], &metas).unwrap();
        assert!(singletons.clusters.iter().all(|c| c.h_squares == 0.0 && c.h_optimality == 0.0 && c.h_trajectories == 0.0));
    }

    #[test]
    fn comparison_cases() {
        let a = [1, 1, 2, 2];
        let same = compare_clusterings(&a, &a).unwrap();
        assert!(same.max_a.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!((same.mean - 1.0).abs() < 1e-12);
        let cross = compare_clusterings(&a, &[1, 2, 1, 2]).unwrap();
        assert!(cross.max_a.iter().chain(&cross.max_b).all(|v| v.abs() < 1e-12));
        assert_eq!(cross.mean, 0.0);
    }

    #[test]
    fn random_labelings_are_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..100)).collect();
        let b: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..100)).collect();
        let c = compare_clusterings(&a, &b).unwrap();
        assert!(c.mean < 0.15, "{}", c.mean);
    }
}
