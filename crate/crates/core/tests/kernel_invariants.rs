use ftucker::kernel::{matern_to_sde, MaternHyper};
use ftucker::linalg::max_abs_diff;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STATIONARITY_TOL: f64 = 1e-8;
const SEMIGROUP_TOL: f64 = 1e-9;

fn draws(seed: u64) -> impl Iterator<Item = (MaternHyper<f64>, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..100).map(move |i| {
        let nu = if i % 2 == 0 { 0.5 } else { 1.5 };
        let h = MaternHyper::new(nu, rng.random_range(0.05..2.0), rng.random_range(0.1..3.0)).unwrap();
        (h, rng.random_range(0.0..1.5), rng.random_range(0.0..1.5))
    })
}

#[test]
fn transition_preserves_stationary_covariance() {
    for (h, d, _) in draws(1) {
        let ssm = matern_to_sde(&h).unwrap();
        let t = ssm.transition(d).unwrap();
        let propagated = t.a.sandwich(&ssm.p_inf).unwrap().add(&t.q).unwrap();
        let err = max_abs_diff(propagated.as_slice(), ssm.p_inf.as_slice());
        assert!(err < STATIONARITY_TOL, "{h:?} delta={d}: {err:e}");
    }
}

#[test]
fn transitions_compose() {
    for (h, d1, d2) in draws(2) {
        let ssm = matern_to_sde(&h).unwrap();
        let whole = ssm.expm(d1 + d2);
        let split = ssm.expm(d2).matmul(&ssm.expm(d1)).unwrap();
        let err = max_abs_diff(whole.as_slice(), split.as_slice());
        assert!(err < SEMIGROUP_TOL, "{h:?} {d1}+{d2}: {err:e}");
    }
}

#[test]
fn lyapunov_equation_holds() {
    for (h, _, _) in draws(3) {
        let r = matern_to_sde(&h).unwrap().lyapunov_residual().unwrap();
        assert!(r.max_abs() < 1e-8, "{h:?}");
    }
}

#[test]
fn process_noise_is_psd() {
    for (h, d, _) in draws(4) {
        let q = matern_to_sde(&h).unwrap().transition(d).unwrap().q;
        for i in 0..q.rows() {
            assert!(q[(i, i)] >= 0.0);
        }
        if q.rows() == 2 {
            let det = q[(0, 0)] * q[(1, 1)] - q[(0, 1)] * q[(1, 0)];
            assert!(det >= -1e-14, "{h:?} delta={d}: det {det:e}");
        }
    }
}
