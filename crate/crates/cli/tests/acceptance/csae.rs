use ndarray::{concatenate, s, Array, Array1, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use planlens::csae::{
    loss_and_gradients_masked, r_squared, reconstruction_stats, train, Batch, CsaeParams, Gradients, LossWeights,
    ProbeParams, TermMask, TrainConfig, TrainData,
};
use planlens::dataset::{PairSet, Split};
use planlens::digest::derive_seed;
use planlens::metrics::lambda_sweep;

use super::{ensure, Outcome};

struct Instance {
    params: CsaeParams<f64>,
    probe: ProbeParams<f64>,
    plus: Array2<f64>,
    minus: Array2<f64>,
}

const C: usize = 3;

fn normal(rng: &mut ChaCha8Rng, shape: (usize, usize), sd: f64) -> Array2<f64> {
    Array::from_shape_fn(shape, |_| {
        let v: f64 = StandardNormal.sample(rng);
        sd * v
    })
}

fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = CsaeParams::<f64>::init(2 * C, 8, 3, seed).unwrap();
    params.w_e = normal(&mut rng, (8, 2 * C), 0.8);
    params.w_d = normal(&mut rng, (2 * C, 8), 0.8);
    params.b_e = normal(&mut rng, (1, 8), 0.3).row(0).to_owned();
    params.b_d = normal(&mut rng, (1, 2 * C), 0.3).row(0).to_owned();
    let probe = ProbeParams { w: normal(&mut rng, (1, 5), 1.0).row(0).to_owned(), b: rng.random_range(-0.5..0.5) };
    let mut plus = normal(&mut rng, (4, 2 * C), 1.0);
    let mut minus = normal(&mut rng, (4, 2 * C), 1.0);
    let root = normal(&mut rng, (4, C), 1.0);
    plus.slice_mut(s![.., ..C]).assign(&root);
    minus.slice_mut(s![.., ..C]).assign(&root);
    Instance { params, probe, plus, minus }
}

// Pre-activations near zero, or c-features of a pair nearly equal, sit on a kink of the
// objective where central differences are meaningless.
fn near_kink(inst: &Instance) -> bool {
    let p = &inst.params;
    let zp = inst.plus.dot(&p.w_e.t()) + &p.b_e;
    let zm = inst.minus.dot(&p.w_e.t()) + &p.b_e;
    if zp.iter().chain(&zm).any(|z| z.abs() < 1e-3) {
        return true;
    }
    let fp = zp.mapv(|x| x.max(0.0));
    let fm = zm.mapv(|x| x.max(0.0));
    Zip::from(fp.slice(s![.., ..3]))
        .and(fm.slice(s![.., ..3]))
        .fold(false, |k, &a, &b| k || ((a > 0.0 || b > 0.0) && (a - b).abs() < 1e-3))
}

fn param_at(inst: &mut Instance, k: usize) -> &mut f64 {
    let (p, probe) = (&mut inst.params, &mut inst.probe);
    p.w_e
        .iter_mut()
        .chain(p.b_e.iter_mut())
        .chain(p.w_d.iter_mut())
        .chain(p.b_d.iter_mut())
        .chain(probe.w.iter_mut())
        .chain(std::iter::once(&mut probe.b))
        .nth(k)
        .expect("parameter index")
}

fn flat(g: &Gradients<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = g.w_e.iter().chain(&g.b_e).chain(&g.w_d).chain(&g.b_d).chain(&g.probe_w).copied().collect();
    v.push(g.probe_b);
    v
}

pub fn gradients() -> Outcome {
    let w = LossWeights { lambda_sparse: 0.3, lambda_contrast: 0.7, lambda_aux: 0.6, lambda_probe: 0.9 };
    let none = TermMask { rec: false, root: false, contrast_c: false, contrast_d: false, probe: false };
    let cases = [
        ("reconstruction", TermMask { rec: true, ..none }, false),
        ("root", TermMask { root: true, ..none }, false),
        ("contrast-c", TermMask { contrast_c: true, ..none }, false),
        ("contrast-d", TermMask { contrast_d: true, ..none }, false),
        ("probe", TermMask { probe: true, ..none }, false),
        ("composite", TermMask::ALL, false),
        ("plain", TermMask { rec: true, ..none }, true),
    ];
    let mut worst = 0.0f64;
    let mut total = 0;
    for (name, mask, single) in cases {
        let mut checked = 0;
        let mut seed = 1000;
        while checked < 20 {
            seed += 1;
            let mut inst = instance(seed);
            if near_kink(&inst) {
                continue;
            }
            checked += 1;
            let loss = |inst: &Instance| {
                let b = if single {
                    Batch::Single(inst.plus.view())
                } else {
                    Batch::Pairs { plus: inst.plus.view(), minus: inst.minus.view() }
                };
                loss_and_gradients_masked(b, &inst.params, &inst.probe, &w, false, mask).unwrap()
            };
            let analytic = flat(&loss(&inst).1);
            for k in 0..analytic.len() {
                let orig = *param_at(&mut inst, k);
                *param_at(&mut inst, k) = orig + 1e-5;
                let up = loss(&inst).0.total;
                *param_at(&mut inst, k) = orig - 1e-5;
                let down = loss(&inst).0.total;
                *param_at(&mut inst, k) = orig;
                let numeric = (up - down) / 2e-5;
                let err = (numeric - analytic[k]).abs() / numeric.abs().max(analytic[k].abs()).max(1e-6);
                ensure(err < 1e-4, format!("{name} seed {seed} param {k}: analytic {} vs numeric {numeric}", analytic[k]))?;
                worst = worst.max(err);
            }
            total += 1;
        }
    }
    Ok(format!("{total} instances over {} terms, worst relative error {worst:.2e}", cases.len()))
}

fn unit_atoms(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f32> {
    let mut a: Array2<f32> = Array::from_shape_fn((n, d), |_| StandardNormal.sample(rng));
    for mut r in a.rows_mut() {
        let norm = r.dot(&r).sqrt();
        r /= norm;
    }
    a
}

fn sparse_combination(atoms: &Array2<f32>, k: usize, rng: &mut ChaCha8Rng) -> Array1<f32> {
    let mut x = Array1::<f32>::zeros(atoms.ncols());
    for i in rand::seq::index::sample(rng, atoms.nrows(), k) {
        let c: f32 = rng.random_range(0.5..1.5);
        x.scaled_add(c, &atoms.row(i));
    }
    x
}

pub fn dictionary_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let atoms = unit_atoms(64, 32, &mut rng);
    let sample = |n: usize, rng: &mut ChaCha8Rng| {
        let mut x = Array2::<f32>::zeros((n, 32));
        for mut row in x.rows_mut() {
            row.assign(&sparse_combination(&atoms, 5, rng));
        }
        x
    };
    let train_x = sample(50_000, &mut rng);
    let val_x = sample(2_000, &mut rng);
    let cfg = TrainConfig { steps: 10_000, batch_size: 256, validation_interval: 1000, resample_interval: Some(1000), ..Default::default() };
    let n_f = 128;
    let out = train(&TrainData::single(train_x), None, n_f, 0, &cfg, &LossWeights::plain(0.1)).map_err(|e| e.to_string())?;
    let (l0, r2) = reconstruction_stats(&out.params, val_x.view()).map_err(|e| e.to_string())?;
    let wd = &out.params.w_d;
    let norms = wd.map_axis(Axis(0), |c| c.dot(&c).sqrt());
    let cos = atoms
        .rows()
        .into_iter()
        .map(|a| (0..n_f).map(|i| a.dot(&wd.column(i)) / norms[i].max(1e-12)).fold(f32::MIN, f32::max) as f64)
        .sum::<f64>()
        / atoms.nrows() as f64;
    let detail = format!("validation R2 {r2:.4}, mean best-match cosine {cos:.4}, l0 {l0:.2}");
    ensure(r2 >= 0.9 && cos >= 0.8, detail.clone())?;
    Ok(detail)
}

pub fn planted_contrastive() -> Outcome {
    let c = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shared = unit_atoms(32, c, &mut rng);
    let positive = unit_atoms(8, c, &mut rng);
    let negative = unit_atoms(8, c, &mut rng);
    let pairs = |n: usize, rng: &mut ChaCha8Rng| {
        let mut rows = Array2::<f32>::zeros((2 * n, 2 * c));
        for i in 0..n {
            let sh = sparse_combination(&shared, 3, rng);
            let sp = sparse_combination(&positive, 1, rng);
            let sn = sparse_combination(&negative, 1, rng);
            rows.slice_mut(s![2 * i, ..c]).assign(&sh);
            rows.slice_mut(s![2 * i, c..]).assign(&(&sh + &sp));
            rows.slice_mut(s![2 * i + 1, ..c]).assign(&sh);
            rows.slice_mut(s![2 * i + 1, c..]).assign(&(&sh + &sn));
        }
        TrainData::pairs(rows, (0..n).map(|i| (2 * i, 2 * i + 1)).collect()).unwrap()
    };
    let train_set = pairs(20_000, &mut rng);
    let held_out = pairs(2_000, &mut rng);
    let (n_f, n_c) = (128, 64);
    let weights = LossWeights { lambda_sparse: 0.1, lambda_contrast: 0.1, lambda_aux: 1.0, lambda_probe: 0.1 };
    let cfg = TrainConfig { steps: 5000, validation_interval: 1000, ..Default::default() };

    let list = held_out.pair_list().unwrap();
    let hp = held_out.rows().select(Axis(0), &list.iter().map(|p| p.0).collect::<Vec<_>>());
    let hm = held_out.rows().select(Axis(0), &list.iter().map(|p| p.1).collect::<Vec<_>>());
    let stats = |p: &CsaeParams<f32>, probe: &ProbeParams<f32>| {
        let fp = p.encode_batch(hp.view()).unwrap();
        let fm = p.encode_batch(hm.view()).unwrap();
        let (dp, dm) = (fp.slice(s![.., n_c..]), fm.slice(s![.., n_c..]));
        let overlap = (&dp * &dm).sum() as f64 / list.len() as f64;
        let (mut tp, mut fp_, mut fn_) = (0usize, 0usize, 0usize);
        for i in 0..list.len() {
            if probe.prob(dp.row(i)) > 0.5 { tp += 1 } else { fn_ += 1 }
            if probe.prob(dm.row(i)) > 0.5 {
                fp_ += 1;
            }
        }
        let f1 = 2.0 * tp as f64 / (2 * tp + fp_ + fn_) as f64;
        let root = p.decode_root_batch(fp.slice(s![.., ..n_c])).unwrap();
        let root_r2 = r_squared(hp.slice(s![.., ..c]), root.view());
        (overlap, f1, root_r2)
    };
    let init = CsaeParams::<f32>::init(2 * c, n_f, n_c, derive_seed(cfg.seed, 0)).map_err(|e| e.to_string())?;
    let (overlap0, _, _) = stats(&init, &ProbeParams::zeros(n_f - n_c));
    let out = train(&train_set, Some(&held_out), n_f, n_c, &cfg, &weights).map_err(|e| e.to_string())?;
    let (overlap, f1, root_r2) = stats(&out.params, &out.probe);
    let all = concatenate(Axis(0), &[hp.view(), hm.view()]).unwrap();
    let (_, r2) = reconstruction_stats(&out.params, all.view()).map_err(|e| e.to_string())?;
    let detail = format!(
        "held-out d-probe F1 {f1:.4}, d-overlap {overlap0:.3} -> {overlap:.4} ({:.1}% drop), c root R2 {root_r2:.4}, full R2 {r2:.4}",
        100.0 * (1.0 - overlap / overlap0)
    );
    ensure(f1 >= 0.9 && overlap <= 0.5 * overlap0 && root_r2 >= 0.8, detail.clone())?;
    Ok(detail)
}

pub fn lambda_monotonicity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ctx = super::fixture_context(dir.path(), |cfg| {
        cfg.dataset.roots.max_roots = Some(60);
        cfg.dataset.roots.per_game_cap = Some(6);
        cfg.dataset.build.squares_per_board = Some(16);
    });
    for stage in ["ingest", "roots", "activations"] {
        super::run_command(&ctx, stage)?;
    }
    let data_dir = ctx.dataset_dir();
    let load = |split| PairSet::load(&data_dir, split).map_err(|e| e.to_string());
    let data = TrainData::from_pair_set(&load(Split::Train)?).map_err(|e| e.to_string())?;
    let validation = TrainData::from_pair_set(&load(Split::Validation)?).map_err(|e| e.to_string())?;
    let lambdas = [1e-3, 1e-2, 3e-2, 1e-1, 3e-1];
    let cfg = TrainConfig { steps: 1500, batch_size: 128, validation_interval: 500, seed: 7, ..Default::default() };
    let c = &ctx.cfg.csae;
    let sweep = lambda_sweep(&data, &validation, &lambdas, c.n_f, c.n_c, &cfg, &c.weights).map_err(|e| e.to_string())?;
    let points: Vec<String> = sweep.points.iter().map(|p| format!("{}: l0 {:.2} R2 {:.4}", p.lambda, p.l0, p.r2)).collect();
    let detail = format!("{} train pairs; {}", data.len(), points.join(", "));
    ensure(sweep.points.len() >= 4 && sweep.is_monotone(0.02, 0.0), detail.clone())?;
    Ok(detail)
}
