//! Random 1-D regression problems and their dense-kernel GP posterior.

use ftucker::chain::ModeChain;
use ftucker::kernel::{matern_to_sde, MaternHyper};
use ftucker::linalg::{GaussianNat, Matrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Problem {
    pub hyper: MaternHyper<f64>,
    pub nodes: Vec<f64>,
    /// `(node, y)` pairs; a node may carry zero, one or several.
    pub obs: Vec<(usize, f64)>,
    pub noise: f64,
}

pub fn random_problem(rng: &mut ChaCha8Rng, nu: f64) -> Problem {
    let n = rng.random_range(3..=20);
    let mut nodes: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
    nodes.sort_by(f64::total_cmp);
    nodes.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
    let hyper = MaternHyper::new(nu, rng.random_range(0.2..1.5), rng.random_range(0.5..2.0)).unwrap();
    let mut obs = Vec::new();
    for s in 0..nodes.len() {
        // leave some nodes empty, give others repeated observations
        for _ in 0..rng.random_range(0..3) {
            obs.push((s, rng.random_range(-2.0..2.0)));
        }
    }
    if obs.is_empty() {
        obs.push((0, 1.0));
    }
    Problem {
        hyper,
        nodes,
        obs,
        noise: rng.random_range(0.05..0.5),
    }
}

pub fn chain_of(p: &Problem) -> ModeChain<f64> {
    ModeChain::new(
        p.nodes.clone(),
        matern_to_sde(&p.hyper).unwrap().blockdiag_expand(1).unwrap(),
    )
    .unwrap()
}

pub fn node_messages(p: &Problem) -> Vec<GaussianNat<f64>> {
    let mut msgs = vec![GaussianNat::zero(1); p.nodes.len()];
    for &(s, y) in &p.obs {
        msgs[s]
            .add_assign(&GaussianNat::new(Matrix::from_rows(&[vec![1.0 / p.noise]]), vec![y / p.noise]).unwrap())
            .unwrap();
    }
    msgs
}

/// Dense GP posterior mean and variance at `xs`.
pub fn gp_posterior(p: &Problem, xs: &[f64]) -> Vec<(f64, f64)> {
    let xo: Vec<f64> = p.obs.iter().map(|&(s, _)| p.nodes[s]).collect();
    let y: Vec<f64> = p.obs.iter().map(|&(_, y)| y).collect();
    let k = |a: f64, b: f64| p.hyper.kernel_eval(a, b);
    let gram: Vec<Vec<f64>> = xo
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            xo.iter()
                .enumerate()
                .map(|(j, &b)| k(a, b) + if i == j { p.noise } else { 0.0 })
                .collect()
        })
        .collect();
    let alpha = super::solve_vec(&gram, &y);
    xs.iter()
        .map(|&x| {
            let ks: Vec<f64> = xo.iter().map(|&b| k(x, b)).collect();
            let v = super::solve_vec(&gram, &ks);
            (super::dot(&ks, &alpha), k(x, x) - super::dot(&ks, &v))
        })
        .collect()
}

