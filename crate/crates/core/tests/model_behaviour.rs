use ftucker::cep::ModelKind;
use ftucker::data::{gen_synthetic, Dataset, Entry, NoiseLevel, Rescale};
use ftucker::linalg::{Matrix, TuckerCore};
use ftucker::model::{fit, FitConfig, FittedModel};
use ftucker::kernel::MaternHyper;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn hyper(nu: f64, ell: f64) -> MaternHyper<f64> {
    MaternHyper::new(nu, ell, 1.0).unwrap()
}

fn random_data(seed: u64, n: usize, modes: usize) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = (0..n)
        .map(|_| Entry {
            index: (0..modes).map(|_| rng.random_range(0.0..1.0)).collect(),
            value: rng.random_range(-1.0..1.0),
        })
        .collect();
    Dataset::new(modes, entries).unwrap()
}

#[test]
fn cp_equals_tucker_with_fixed_diagonal_core() {
    for seed in 0..4 {
        let data = random_data(seed, 5, 2);
        let mut cp = FitConfig::uniform(2, 2, hyper(1.5, 0.3));
        cp.kind = ModelKind::Cp;
        cp.max_iters = 15;
        cp.seed = seed;
        let mut tucker = cp.clone();
        tucker.kind = ModelKind::Tucker;
        tucker.fixed_core = Some(TuckerCore::identity_diagonal(2, 2).unwrap().into_vec());
        let a = fit(&data, &cp).unwrap();
        let b = fit(&data, &tucker).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        for _ in 0..20 {
            let x = [rng.random_range(-0.1..1.1), rng.random_range(-0.1..1.1)];
            let (ma, va) = a.predict(&x).unwrap();
            let (mb, vb) = b.predict(&x).unwrap();
            assert!((ma - mb).abs() < 1e-8, "seed {seed}: {ma} vs {mb}");
            assert!((va - vb).abs() < 1e-8);
        }
        let (ma, mb) = (a.messages.unwrap(), b.messages.unwrap());
        for k in 0..2 {
            for (p, q) in ma.z[k].iter().zip(&mb.z[k]) {
                assert!(p.shift.iter().zip(&q.shift).all(|(x, y)| (x - y).abs() < 1e-8));
                assert!(p
                    .precision
                    .as_slice()
                    .iter()
                    .zip(q.precision.as_slice())
                    .all(|(x, y)| (x - y).abs() < 1e-8));
            }
        }
    }
}

#[test]
fn predictions_invariant_to_index_rescaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (lo, span) = ([10.0, -2.0], [40.0, 0.5]);
    let entries: Vec<Entry<f64>> = (0..60)
        .map(|_| {
            let u: [f64; 2] = [rng.random(), rng.random()];
            Entry {
                index: vec![lo[0] + span[0] * u[0], lo[1] + span[1] * u[1]],
                value: (3.0 * u[0]).sin() * (2.0 * u[1]).cos(),
            }
        })
        .collect();
    let scaled = Dataset::new(2, entries.clone()).unwrap();
    let raw = Dataset::unscaled(2, entries).unwrap();
    let mut cfg = FitConfig::uniform(2, 1, hyper(1.5, 0.2));
    cfg.max_iters = 20;
    let a = fit(&scaled, &cfg).unwrap();
    let mut cfg_raw = cfg.clone();
    for k in 0..2 {
        cfg_raw.kernels[k].lengthscale = 0.2 * scaled.rescale()[k].span();
    }
    let b = fit(&raw, &cfg_raw).unwrap();
    for _ in 0..20 {
        let x = [lo[0] + span[0] * rng.random::<f64>(), lo[1] + span[1] * rng.random::<f64>()];
        let (pa, pb) = (a.predict_mean(&x).unwrap(), b.predict_mean(&x).unwrap());
        assert!((pa - pb).abs() < 1e-6, "{pa} vs {pb}");
    }
}

#[test]
fn single_observation_pulls_prediction_toward_it() {
    for y in [1.0, -0.5] {
        let data = Dataset::new(2, vec![Entry { index: vec![0.2, 0.7], value: y }]).unwrap();
        let model = fit(&data, &FitConfig::uniform(2, 1, hyper(1.5, 0.1))).unwrap();
        let p = model.predict_mean(&[0.2, 0.7]).unwrap();
        assert!(p * y > 0.0 && p.abs() <= y.abs() + 1e-9, "y={y} prediction {p}");
    }
}

#[test]
fn noiseless_data_drives_noise_precision_up() {
    let data = gen_synthetic::<f64>(300, NoiseLevel::Variance(0.0), 3).unwrap();
    let mut cfg = FitConfig::uniform(2, 1, hyper(1.5, 0.1));
    cfg.b0 = 1e-3;
    cfg.max_iters = 60;
    let m = fit(&data, &cfg).unwrap();
    let taus: Vec<f64> = m.trace.iter().map(|r| r.e_tau).collect();
    // the first sweep replaces the β = 0 initial messages; growth follows
    for w in taus[1..].windows(2) {
        assert!(w[1] >= w[0], "E[tau] fell: {taus:?}");
    }
    assert!(*taus.last().unwrap() > 1e3);
    // predictions at training tuples reproduce the data
    for e in data.entries().iter().filter(|e| e.value.abs() > 0.05).take(40) {
        let p = m.predict_mean(&e.index).unwrap();
        assert!(((p - e.value) / e.value).abs() < 0.05, "{p} vs {}", e.value);
    }
}

fn small_fit(kind: ModelKind, modes: usize) -> (Dataset<f64>, FittedModel<f64>) {
    let data = random_data(9, 40, modes);
    let mut cfg = FitConfig::uniform(modes, 2, hyper(0.5, 0.4));
    cfg.kind = kind;
    cfg.max_iters = 10;
    let m = fit(&data, &cfg).unwrap();
    (data, m)
}

#[test]
fn variance_floor_is_noise() {
    for kind in [ModelKind::Tucker, ModelKind::Cp] {
        let (data, mut m) = small_fit(kind, 2);
        let noise = 1.0 / m.tau.mean();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x = [rng.random_range(-0.2..1.2), rng.random_range(-0.2..1.2)];
            assert!(m.predict_var(&x).unwrap() >= noise);
        }
        // zero every posterior covariance
        for post in &mut m.factors {
            for b in &mut post.smoothed {
                b.cov = Matrix::zeros(b.cov.rows(), b.cov.cols());
            }
            for c in &mut post.cross {
                *c = Matrix::zeros(c.rows(), c.cols());
            }
        }
        let d = m.core.s.rows();
        m.core.s = Matrix::zeros(d, d);
        let v = m.predict_var(&data.entries()[3].index).unwrap();
        assert!((v - noise).abs() < 1e-12 * noise, "{v} vs {noise}");
    }
}

#[test]
fn one_mode_variance_is_exact() {
    // K = 1, CP, R = 1: the prediction is U itself, Var = V + 1/E[τ]
    let (_, m) = small_fit(ModelKind::Cp, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let x = rng.random_range(-0.2..1.2);
        let f = m.factor_at(0, x).unwrap();
        let exact: f64 = (0..f.mean.len())
            .flat_map(|i| (0..f.mean.len()).map(move |j| (i, j)))
            .map(|(i, j)| f.second[(i, j)])
            .sum::<f64>()
            + 1.0 / m.tau.mean();
        let v = m.predict_var(&[x]).unwrap();
        assert!((v - exact).abs() < 1e-12, "{v} vs {exact}");
    }
}

#[test]
fn zero_factors_predict_zero() {
    let (_, mut m) = small_fit(ModelKind::Tucker, 2);
    for post in &mut m.factors {
        for b in &mut post.smoothed {
            b.mean.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    assert_eq!(m.predict_mean(&[0.3, 0.4]).unwrap(), 0.0);
    assert_eq!(m.predict_mean(&[-5.0, 7.0]).unwrap(), 0.0);
}

#[test]
fn trajectory_at_nodes_is_the_smoothed_posterior() {
    let (data, m) = small_fit(ModelKind::Tucker, 2);
    for k in 0..2 {
        let r = data.rescale()[k];
        // node indexes back in original units
        let grid: Vec<f64> = data.entries().iter().map(|e| e.index[k]).collect();
        let traj = m.export_trajectory(k, &grid).unwrap();
        for (n, p) in traj.iter().enumerate() {
            let s = data.positions(n)[k];
            assert_eq!(m.chains[k].indexes()[s], r.apply(p.index));
            let b = &m.factors[k].smoothed[s];
            let h = m.chains[k].h();
            assert_eq!(p.mean, h.matvec(&b.mean).unwrap());
            let var = h.sandwich(&b.cov).unwrap().diag();
            for (sd, v) in p.std.iter().zip(var) {
                assert!((sd * sd - v).abs() < 1e-14);
            }
        }
        assert!(m.export_trajectory(k, &[]).unwrap().is_empty());
    }
}

#[test]
fn json_round_trip_preserves_predictions() {
    let (data, m) = small_fit(ModelKind::Tucker, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    m.save_json(&path).unwrap();
    let back = FittedModel::<f64>::load_json(&path).unwrap();
    assert!(back.messages.is_none());
    assert_eq!(back.config, m.config);
    for e in data.entries() {
        assert_eq!(back.predict(&e.index).unwrap(), m.predict(&e.index).unwrap());
    }
    assert_eq!(back.predict(&[-1.0, 0.5, 2.0]).unwrap(), m.predict(&[-1.0, 0.5, 2.0]).unwrap());
}

#[test]
fn evaluate_reports_errors_and_rejects_empty() {
    let (data, m) = small_fit(ModelKind::Cp, 2);
    let metrics = m.evaluate(&data).unwrap();
    assert!(metrics.rmse >= metrics.mae && metrics.mae >= 0.0);
    let empty = Dataset::with_rescale(2, vec![], vec![Rescale::identity(); 2]).unwrap();
    assert!(m.evaluate(&empty).is_err());
    assert!(m.predict_mean(&[0.5]).is_err());
}

#[test]
fn fit_is_deterministic_across_thread_counts() {
    let data = gen_synthetic::<f64>(200, NoiseLevel::Variance(0.02), 4).unwrap();
    let mut cfg = FitConfig::uniform(2, 2, hyper(1.5, 0.1));
    cfg.max_iters = 8;
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| fit(&data, &cfg).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.core, b.core);
    assert_eq!(a.predict(&[0.3, 0.6]).unwrap(), b.predict(&[0.3, 0.6]).unwrap());
}

#[test]
fn mixed_rank_tucker_runs() {
    let data = random_data(12, 80, 3);
    let mut cfg = FitConfig::uniform(3, 1, hyper(1.5, 0.3));
    cfg.ranks = vec![2, 1, 3];
    cfg.kernels[1] = hyper(0.5, 0.5);
    cfg.max_iters = 10;
    let m = fit(&data, &cfg).unwrap();
    assert_eq!(m.core.mu.len(), 6);
    let (mean, var) = m.predict(&[0.5, 0.5, 0.5]).unwrap();
    assert!(mean.is_finite() && var > 0.0);
}

#[test]
fn f32_fit_runs() {
    let data = gen_synthetic::<f32>(100, NoiseLevel::Variance(0.02), 1).unwrap();
    let cfg = FitConfig::<f32>::uniform(2, 1, MaternHyper::new(1.5, 0.1f32, 1.0).unwrap());
    let m = fit(&data, &cfg).unwrap();
    assert!(m.predict_mean(&[0.3, 0.3]).unwrap().is_finite());
}
