use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use planlens::analysis::{cluster_features, cluster_samples, compare_clusterings, ClusterConfig};
use planlens::dataset::RecordMeta;
use planlens::metrics::{
    classification_metrics, entropy, fit_probe, metric_report, partition_entropy, EntropyMode, FeatureActivationTable,
    FeatureSet, Partition, ProbeFit, Thresholds,
};
use planlens::sampler::Optimality;

use super::{ensure, Outcome};

fn meta(square: u8, traj: u64, optimal: bool) -> RecordMeta {
    RecordMeta {
        root_id: traj / 4,
        traj_id: traj,
        depth: 1,
        square,
        flag: if optimal { Optimality::Optimal } else { Optimality::Suboptimal },
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((a - b).abs() <= tol, format!("{what}: {a} vs {b}"))
}

pub fn metrics_oracles() -> Outcome {
    close(entropy(vec![1.0; 64]).unwrap(), 64f64.ln(), 1e-6, "uniform entropy")?;
    close(entropy([3.0, 0.0, 0.0]).unwrap(), 0.0, 1e-6, "degenerate entropy")?;
    let split = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
    close(entropy([0.75, 0.25]).unwrap(), split, 1e-6, "0.75/0.25 entropy")?;
    close(entropy([3.0, 1.0]).unwrap(), 0.5623, 5e-5, "0.75/0.25 entropy from counts")?;

    let mut table = FeatureActivationTable::new(2, 1, 1e-6);
    for sq in 0..64u8 {
        table.push_dense(meta(sq, sq as u64 % 4, sq % 2 == 0), &[0.5, if sq == 9 { 2.0 } else { 0.0 }]).map_err(|e| e.to_string())?;
    }
    for mode in [EntropyMode::Mass, EntropyMode::Count] {
        let uniform = partition_entropy(&table, 0, Partition::Squares, mode).map_err(|e| e.to_string())?;
        close(uniform, 64f64.ln(), 1e-6, "table entropy over squares")?;
        let single = partition_entropy(&table, 1, Partition::Squares, mode).map_err(|e| e.to_string())?;
        close(single, 0.0, 1e-6, "single-square entropy")?;
        let trajectories = partition_entropy(&table, 0, Partition::Trajectories, mode).map_err(|e| e.to_string())?;
        close(trajectories, 4f64.ln(), 1e-6, "table entropy over trajectories")?;
    }

    let m = classification_metrics(&[true, true, false, false, true], &[true, false, true, false, true]).map_err(|e| e.to_string())?;
    close(m.precision, 2.0 / 3.0, 1e-12, "hand precision")?;
    close(m.recall, 2.0 / 3.0, 1e-12, "hand recall")?;
    close(m.f1, 2.0 / 3.0, 1e-12, "hand F1")?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..50 {
        let n = rng.random_range(10..400);
        let bias: f64 = rng.random();
        let actual: Vec<bool> = (0..n).map(|i| i == 0 || (i > 1 && rng.random_bool(0.5))).collect();
        let predicted: Vec<bool> = (0..n).map(|_| rng.random_bool(bias)).collect();
        let count = |p: bool, a: bool| predicted.iter().zip(&actual).filter(|&(&x, &y)| x == p && y == a).count() as f64;
        let (tp, fp, fn_) = (count(true, true), count(true, false), count(false, true));
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = tp / (tp + fn_);
        let f1 = if tp > 0.0 { 2.0 * tp / (2.0 * tp + fp + fn_) } else { 0.0 };
        let got = classification_metrics(&predicted, &actual).map_err(|e| e.to_string())?;
        close(got.precision, precision, 1e-12, &format!("case {case} precision"))?;
        close(got.recall, recall, 1e-12, &format!("case {case} recall"))?;
        close(got.f1, f1, 1e-12, &format!("case {case} F1"))?;
    }

    let mut table = FeatureActivationTable::new(8, 4, 1e-6);
    for i in 0..400u64 {
        let optimal = i % 2 == 0;
        let f: Vec<f32> = (0..8)
            .map(|k| {
                let on = if k == 5 { optimal } else { rng.random_bool(0.3) };
                if on { rng.random_range(0.1..1.0) } else { 0.0 }
            })
            .collect();
        table.push_dense(meta((i % 64) as u8, i / 2, optimal), &f).map_err(|e| e.to_string())?;
    }
    let probes = [FeatureSet::C, FeatureSet::D, FeatureSet::F]
        .into_iter()
        .map(|s| fit_probe(&table, s, &ProbeFit::default()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let report = metric_report(&table, &probes, 2.4, 0.9, &Thresholds::default(), EntropyMode::default()).map_err(|e| e.to_string())?;
    let text = report.render_table();
    let lines: Vec<&str> = text.lines().collect();
    let header: Vec<&str> = lines[0].split_whitespace().collect();
    ensure(header == ["Features", "Size", "Dead", "Overactive", "H(A_s)", "H(A_t)", "F1", "P", "R"], format!("header {header:?}"))?;
    for (line, set) in lines[1..4].iter().zip(["c", "d", "f"]) {
        let cells: Vec<&str> = line.split_whitespace().collect();
        ensure(cells.len() == header.len() && cells[0] == set, format!("row {line:?}"))?;
        ensure(cells.iter().all(|c| *c != "-" && !c.contains("NaN")), format!("empty cell in {line:?}"))?;
    }
    let d = report.row(FeatureSet::D).and_then(|r| r.probe).ok_or("no d probe")?;
    ensure(d.f1 > 0.9, format!("planted d feature probe F1 {}", d.f1))?;
    Ok(format!("entropy, table-entropy and 53 confusion-matrix cases match; c/d/f report rendered (d-probe F1 {:.3})", d.f1))
}

fn planted_table(rng: &mut ChaCha8Rng, n: usize) -> (FeatureActivationTable, Vec<usize>) {
    let mut table = FeatureActivationTable::new(8, 4, 1e-6);
    let mut truth = Vec::new();
    for i in 0..n {
        let group = rng.random_range(0..2usize);
        let f: Vec<f32> = (0..8)
            .map(|k| {
                let home = (k % 4 < 2) == (group == 0);
                if home { rng.random_range(0.5..1.5) } else if rng.random_bool(0.1) { rng.random_range(0.0..0.2) } else { 0.0 }
            })
            .collect();
        table.push_dense(meta((i % 64) as u8, i as u64, i % 2 == 0), &f).unwrap();
        truth.push(group);
    }
    (table, truth)
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    let mut map = std::collections::HashMap::new();
    let mut back = std::collections::HashMap::new();
    a.iter().zip(b).all(|(x, y)| *map.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
}

pub fn clustering() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (table, truth) = planted_table(&mut rng, 600);
    let cfg = ClusterConfig { n_components: 4, n_clusters: 2, max_samples: 600, embed_points: 200, seed: 3, ..Default::default() };
    let a = cluster_samples(&table, FeatureSet::F, &cfg).map_err(|e| e.to_string())?;
    let b = cluster_samples(&table, FeatureSet::F, &cfg).map_err(|e| e.to_string())?;
    ensure(a.labels == b.labels && a.tree == b.tree, "sample clustering is not deterministic")?;
    ensure(a.embedding == b.embedding, "embedding is not deterministic")?;
    let planted: Vec<usize> = a.samples.iter().map(|&s| truth[s]).collect();
    ensure(same_partition(&a.labels, &planted), "planted sample clusters not recovered")?;

    let features = cluster_features(&table, FeatureSet::F, &ClusterConfig { n_clusters: 2, ..cfg.clone() }).map_err(|e| e.to_string())?;
    let groups: Vec<usize> = features.features.iter().map(|&f| usize::from(f % 4 < 2)).collect();
    ensure(same_partition(&features.labels, &groups), format!("planted feature groups not recovered: {:?}", features.labels))?;

    let mut worst = 0.0f64;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x: Vec<usize> = (0..4000).map(|_| rng.random_range(0..100)).collect();
        let y: Vec<usize> = (0..4000).map(|_| rng.random_range(0..100)).collect();
        worst = worst.max(compare_clusterings(&x, &y).map_err(|e| e.to_string())?.mean);
    }
    ensure(worst < 0.15, format!("random labelings score {worst:.4}"))?;
    Ok(format!("planted sample and feature clusters recovered exactly and reproducibly; random labelings mean-of-max Pearson <= {worst:.4}"))
}
