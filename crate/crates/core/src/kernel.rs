//! Matérn kernels as linear time-invariant SDEs.
//!
//! A Matérn process with half-integer smoothness `ν = m + 1/2` is the first
//! coordinate of an `(m+1)`-dimensional state `z = (f, f', …)` solving
//! `dz/dx = F z + L w(x)` with white noise of spectral density `q_s`.
//! Sampling the state at sorted indexes gives a Gauss–Markov chain with
//! transitions `A = exp(FΔ)` and process noise `Q = P∞ − A P∞ Aᵀ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{blockdiag, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothness {
    #[serde(rename = "0.5")]
    Half,
    #[serde(rename = "1.5")]
    ThreeHalves,
}

impl Smoothness {
    pub fn from_nu(nu: f64) -> Result<Self> {
        if nu == 0.5 {
            Ok(Self::Half)
        } else if nu == 1.5 {
            Ok(Self::ThreeHalves)
        } else {
            Err(Error::UnsupportedSmoothness(nu))
        }
    }

    pub fn nu(self) -> f64 {
        match self {
            Self::Half => 0.5,
            Self::ThreeHalves => 1.5,
        }
    }

    /// State order `m`; the state has `m + 1` components.
    pub fn order(self) -> usize {
        match self {
            Self::Half => 0,
            Self::ThreeHalves => 1,
        }
    }
}

/// Matérn hyperparameters. The lengthscale is in (rescaled) index units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MaternHyper<T> {
    pub nu: Smoothness,
    pub lengthscale: T,
    pub variance: T,
}

impl<T: Scalar> MaternHyper<T> {
    pub fn new(nu: f64, lengthscale: T, variance: T) -> Result<Self> {
        let nu = Smoothness::from_nu(nu)?;
        let h = Self {
            nu,
            lengthscale,
            variance,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > T::zero()) || !self.lengthscale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lengthscale must be positive, got {}",
                self.lengthscale
            )));
        }
        if !(self.variance > T::zero()) || !self.variance.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "variance must be positive, got {}",
                self.variance
            )));
        }
        Ok(())
    }

    /// Covariance `κ(x, x')`. Inference never calls this; it is the dense
    /// reference the state-space form is checked against.
    pub fn kernel_eval(&self, x: T, xp: T) -> T {
        let d = (x - xp).abs();
        let s2 = self.variance;
        match self.nu {
            Smoothness::Half => s2 * (-d / self.lengthscale).exp(),
            Smoothness::ThreeHalves => {
                let r = T::lit(3.0).sqrt() * d / self.lengthscale;
                s2 * (T::one() + r) * (-r).exp()
            }
        }
    }
}

/// LTI-SDE parameters of a univariate Matérn process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MaternSsm<T> {
    pub hyper: MaternHyper<T>,
    /// Drift `F`, `(m+1)×(m+1)`.
    pub f: Matrix<T>,
    /// Noise loading `L`, `(m+1)×1`.
    pub l: Matrix<T>,
    /// White-noise spectral density.
    pub q_s: T,
    /// Stationary covariance, solves `F P + P Fᵀ + L q_s Lᵀ = 0`.
    pub p_inf: Matrix<T>,
}

/// One step of the discretized chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T> {
    pub delta: T,
    pub a: Matrix<T>,
    pub q: Matrix<T>,
}

pub fn matern_to_sde<T: Scalar>(h: &MaternHyper<T>) -> Result<MaternSsm<T>> {
    h.validate()?;
    let (ell, s2) = (h.lengthscale, h.variance);
    let two = T::lit(2.0);
    Ok(match h.nu {
        Smoothness::Half => MaternSsm {
            hyper: *h,
            f: Matrix::from_rows(&[vec![-T::one() / ell]]),
            l: Matrix::from_rows(&[vec![T::one()]]),
            q_s: two * s2 / ell,
            p_inf: Matrix::from_rows(&[vec![s2]]),
        },
        Smoothness::ThreeHalves => {
            let lam = T::lit(3.0).sqrt() / ell;
            MaternSsm {
                hyper: *h,
                f: Matrix::from_rows(&[vec![T::zero(), T::one()], vec![-lam * lam, -two * lam]]),
                l: Matrix::from_rows(&[vec![T::zero()], vec![T::one()]]),
                q_s: T::lit(4.0) * s2 * lam * lam * lam,
                p_inf: Matrix::from_diag(&[s2, lam * lam * s2]),
            }
        }
    })
}

impl<T: Scalar> MaternSsm<T> {
    pub fn order(&self) -> usize {
        self.hyper.nu.order()
    }

    pub fn state_dim(&self) -> usize {
        self.order() + 1
    }

    /// `exp(FΔ)` in closed form.
    pub fn expm(&self, delta: T) -> Matrix<T> {
        let ell = self.hyper.lengthscale;
        match self.hyper.nu {
            Smoothness::Half => Matrix::from_rows(&[vec![(-delta / ell).exp()]]),
            Smoothness::ThreeHalves => {
                // F = [[0,1],[-λ²,-2λ]] has a double eigenvalue -λ, so
                // exp(FΔ) = e^{-λΔ} (I + (F + λI)Δ).
                let lam = T::lit(3.0).sqrt() / ell;
                let e = (-lam * delta).exp();
                let ld = lam * delta;
                Matrix::from_rows(&[
                    vec![e * (T::one() + ld), e * delta],
                    vec![-e * lam * ld, e * (T::one() - ld)],
                ])
            }
        }
    }

    pub fn transition(&self, delta: T) -> Result<Transition<T>> {
        if !(delta >= T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "transition gap must be non-negative, got {delta}"
            )));
        }
        let a = self.expm(delta);
        let q = self.process_noise(delta);
        Ok(Transition { delta, a, q })
    }

    /// `P∞ − exp(FΔ) P∞ exp(FΔ)ᵀ`, evaluated analytically so that small gaps
    /// keep full relative precision instead of cancelling.
    pub fn process_noise(&self, delta: T) -> Matrix<T> {
        let s2 = self.hyper.variance;
        let ell = self.hyper.lengthscale;
        match self.hyper.nu {
            Smoothness::Half => {
                Matrix::from_rows(&[vec![-s2 * (T::lit(-2.0) * delta / ell).exp_m1()]])
            }
            Smoothness::ThreeHalves => {
                let lam = T::lit(3.0).sqrt() / ell;
                let x = lam * delta;
                let e = (T::lit(-2.0) * x).exp();
                let q11 = s2 * one_minus_damped(x, T::lit(2.0));
                let q12 = s2 * T::lit(2.0) * lam * x * x * e;
                let q22 = s2 * lam * lam * one_minus_damped(x, T::lit(-2.0));
                Matrix::from_rows(&[vec![q11, q12], vec![q12, q22]])
            }
        }
    }

    /// `F P∞ + P∞ Fᵀ + L q_s Lᵀ`, zero up to rounding.
    pub fn lyapunov_residual(&self) -> Result<Matrix<T>> {
        let fp = self.f.matmul(&self.p_inf)?;
        let llt = self.l.matmul(&self.l.transpose())?.scale(self.q_s);
        fp.add(&fp.transpose())?.add(&llt)
    }

    /// Replicates the univariate model for `rank` independent latent functions.
    pub fn blockdiag_expand(&self, rank: usize) -> Result<BlockSsm<T>> {
        BlockSsm::new(self.clone(), rank)
    }
}

/// `1 − e^{−2x}(1 + c·x + 2x²)` for `c = ±2`. Uses the Taylor series for
/// small `x`, where the direct form cancels catastrophically.
fn one_minus_damped<T: Scalar>(x: T, c: T) -> T {
    let two = T::lit(2.0);
    if x > T::lit(0.5) {
        return T::one() - (-two * x).exp() * (T::one() + c * x + two * x * x);
    }
    // coefficient of xⁿ in e^{−2x}(1 + c x + 2x²) is
    // (−2)ⁿ/n! + c(−2)ⁿ⁻¹/(n−1)! + 2(−2)ⁿ⁻²/(n−2)!
    let mut sum = T::zero();
    let mut e0 = T::one(); // (−2)ⁿ/n!
    let mut e1 = T::zero(); // (−2)ⁿ⁻¹/(n−1)!
    let mut xn = T::one();
    for n in 1..40 {
        let e2 = e1; // (−2)ⁿ⁻²/(n−2)!
        e1 = e0;
        e0 = e0 * (-two) / T::from_usize_lossy(n);
        xn *= x;
        let coef = e0 + c * e1 + two * e2;
        sum -= coef * xn;
    }
    sum
}

/// Reference evaluation `P∞ − A P∞ Aᵀ` by direct subtraction.
pub fn stationary_noise<T: Scalar>(p_inf: &Matrix<T>, a: &Matrix<T>) -> Result<Matrix<T>> {
    Ok(p_inf.sub(&a.sandwich(p_inf)?)?.symmetrize())
}

/// `rank` independent copies of a univariate state-space model, stacked
/// block-diagonally. `H` picks the function value out of each block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSsm<T> {
    pub base: MaternSsm<T>,
    pub rank: usize,
    pub p_inf: Matrix<T>,
    pub h: Matrix<T>,
}

impl<T: Scalar> BlockSsm<T> {
    pub fn new(base: MaternSsm<T>, rank: usize) -> Result<Self> {
        if rank < 1 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        let d = base.state_dim();
        let mut h = Matrix::zeros(rank, rank * d);
        for r in 0..rank {
            h[(r, r * d)] = T::one();
        }
        let p_inf = base.p_inf.repeat_blockdiag(rank);
        Ok(Self {
            base,
            rank,
            p_inf,
            h,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.rank * self.base.state_dim()
    }

    pub fn transition(&self, delta: T) -> Result<Transition<T>> {
        let t = self.base.transition(delta)?;
        Ok(Transition {
            delta,
            a: blockdiag(&vec![t.a; self.rank]),
            q: blockdiag(&vec![t.q; self.rank]),
        })
    }
}
