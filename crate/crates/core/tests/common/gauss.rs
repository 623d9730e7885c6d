//! Random Gaussian moments and a sampler for Monte-Carlo oracles.

use ftucker::cep::FactorMoments;
use ftucker::linalg::Matrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Vec<f64>> {
    let b: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| scale * ((0..n).map(|k| b[i][k] * b[j][k]).sum::<f64>() + if i == j { 0.1 } else { 0.0 }))
                .collect()
        })
        .collect()
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Gaussian sampler through a test-local Cholesky factor.
pub struct Sampler {
    pub mean: Vec<f64>,
    chol: Vec<Vec<f64>>,
}

impl Sampler {
    pub fn new(mean: Vec<f64>, cov: &[Vec<f64>]) -> Self {
        Self {
            mean,
            chol: super::cholesky(cov),
        }
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let z: Vec<f64> = (0..self.mean.len()).map(|_| StandardNormal.sample(rng)).collect();
        self.mean
            .iter()
            .enumerate()
            .map(|(i, m)| m + (0..=i).map(|k| self.chol[i][k] * z[k]).sum::<f64>())
            .collect()
    }
}

pub fn moments_of(mean: &[f64], cov: &[Vec<f64>]) -> FactorMoments<f64> {
    let n = mean.len();
    let second = Matrix::from_rows(
        &(0..n)
            .map(|i| (0..n).map(|j| cov[i][j] + mean[i] * mean[j]).collect())
            .collect::<Vec<Vec<f64>>>(),
    );
    FactorMoments {
        mean: mean.to_vec(),
        second,
    }
}

