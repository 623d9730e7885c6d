//! Conditional expectation propagation messages.
//!
//! Each likelihood term `N(y_n | vec(W)ᵀ(U¹ ⊗ … ⊗ U^K), τ⁻¹)` is replaced by a
//! product of factors: a Gaussian on `H·Z^k` at the observation's node for
//! every mode, a Gamma factor on `τ`, and (Tucker only) a Gaussian on
//! `vec(W)`. Messages are computed from the current posterior without cavity
//! division. Conditional moments are closed-form; the outer expectation over
//! the core uses its mean (delta method), while second moments of the factors
//! use the exact mean-field Kronecker/Hadamard identities.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{
    dot, kron_all, kron_all_vec, kron_reversed_excluding, kron_vec_reversed_excluding,
    GaussianBelief, GaussianNat, Matrix, TuckerCore,
};
use crate::scalar::Scalar;

/// Shape parameter every Gamma message carries.
pub const TAU_MESSAGE_SHAPE: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Dense core tensor with its own Gaussian posterior.
    #[default]
    Tucker,
    /// Identity-diagonal core, not inferred.
    Cp,
}

/// How factor second moments enter the messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentMode {
    /// `E[UUᵀ] = HVHᵀ + (Hm)(Hm)ᵀ`.
    #[default]
    Exact,
    /// `E[UUᵀ] ≈ (Hm)(Hm)ᵀ`, ignoring factor uncertainty.
    Plugin,
}

/// `q(τ) = Gam(a, b)` in shape/rate form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TauPosterior<T> {
    pub a: T,
    pub b: T,
}

impl<T: Scalar> TauPosterior<T> {
    pub fn new(a: T, b: T) -> Result<Self> {
        if !(a > T::zero() && b > T::zero()) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "Gamma parameters must be positive, got a={a}, b={b}"
            )));
        }
        Ok(Self { a, b })
    }

    pub fn mean(&self) -> T {
        self.a / self.b
    }
}

/// `q(vec W) = N(μ, S)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CorePosterior<T> {
    pub mu: Vec<T>,
    pub s: Matrix<T>,
}

impl<T: Scalar> CorePosterior<T> {
    pub fn prior(dim: usize) -> Self {
        Self {
            mu: vec![T::zero(); dim],
            s: Matrix::identity(dim),
        }
    }

    /// Point mass at a fixed core (the CP case).
    pub fn fixed(core: &TuckerCore<T>) -> Self {
        let d = core.vec().len();
        Self {
            mu: core.vec().to_vec(),
            s: Matrix::zeros(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Gamma message `Gam(τ | α, β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TauMessage<T> {
    pub alpha: T,
    pub beta: T,
}

impl<T: Scalar> TauMessage<T> {
    /// Starting message: shape 3/2, no rate contribution.
    pub fn initial() -> Self {
        Self {
            alpha: T::lit(TAU_MESSAGE_SHAPE),
            beta: T::zero(),
        }
    }
}

/// First and second moments of a projected factor `U = H·Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMoments<T> {
    pub mean: Vec<T>,
    pub second: Matrix<T>,
}

pub fn factor_moments<T: Scalar>(
    belief: &GaussianBelief<T>,
    h: &Matrix<T>,
    mode: MomentMode,
) -> Result<FactorMoments<T>> {
    let mean = h.matvec(&belief.mean)?;
    let outer = Matrix::outer(&mean, &mean);
    let second = match mode {
        MomentMode::Exact => h.sandwich(&belief.cov)?.add(&outer)?.symmetrize(),
        MomentMode::Plugin => outer,
    };
    Ok(FactorMoments { mean, second })
}

/// Posterior of the core as the model sees it.
#[derive(Debug, Clone, Copy)]
pub enum CoreView<'a, T> {
    /// Tucker: `W̄ = unvec(μ)` and the full posterior.
    Tucker {
        mean: &'a TuckerCore<T>,
        posterior: &'a CorePosterior<T>,
    },
    Cp,
}

/// `E[a^∖k]`, `E[a^∖k a^∖kᵀ]` for one observation.
///
/// `factors[j]` are the moments of mode `j` at the observation's node; entry
/// `k` is ignored.
pub fn design_vector_excl<T: Scalar>(
    core: CoreView<'_, T>,
    factors: &[&FactorMoments<T>],
    k: usize,
) -> Result<(Vec<T>, Matrix<T>)> {
    if k >= factors.len() {
        return Err(Error::InvalidArgument(format!(
            "mode {k} out of range for {} modes",
            factors.len()
        )));
    }
    match core {
        CoreView::Tucker { mean, .. } => {
            let wk = mean.mode_unfold(k)?;
            let means: Vec<&[T]> = factors.iter().map(|f| f.mean.as_slice()).collect();
            let seconds: Vec<&Matrix<T>> = factors.iter().map(|f| &f.second).collect();
            let ea = wk.matvec(&kron_vec_reversed_excluding(&means, k))?;
            let eaa = wk.sandwich(&kron_reversed_excluding(&seconds, k))?.symmetrize();
            Ok((ea, eaa))
        }
        CoreView::Cp => {
            let r = factors[k].mean.len();
            let mut ea = vec![T::one(); r];
            let mut eaa = Matrix::from_rows(&vec![vec![T::one(); r]; r]);
            for (j, f) in factors.iter().enumerate() {
                if j == k {
                    continue;
                }
                if f.mean.len() != r {
                    return Err(dim_err("design_vector_excl", "CP requires equal ranks"));
                }
                for (e, &m) in ea.iter_mut().zip(&f.mean) {
                    *e *= m;
                }
                eaa = eaa.hadamard(&f.second)?;
            }
            Ok((ea, eaa))
        }
    }
}

/// Gaussian message on `H·Z^k`: `Λ = E[τ]E[aaᵀ]`, `η = y E[τ] E[a]`.
pub fn message_z<T: Scalar>(y: T, e_tau: T, ea: &[T], eaa: &Matrix<T>) -> GaussianNat<T> {
    GaussianNat {
        precision: eaa.scale(e_tau),
        shift: ea.iter().map(|&a| y * e_tau * a).collect(),
    }
}

/// Moments of the full design scalar `a_n` (the noiseless prediction).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMoments<T> {
    pub mean: T,
    pub second: T,
    /// Tucker only: `E[b]`, `E[bbᵀ]` with `b = U¹ ⊗ … ⊗ U^K`.
    pub kron: Option<(Vec<T>, Matrix<T>)>,
}

pub fn design_moments<T: Scalar>(
    core: CoreView<'_, T>,
    factors: &[&FactorMoments<T>],
) -> Result<DesignMoments<T>> {
    match core {
        CoreView::Tucker { posterior, .. } => {
            let means: Vec<&[T]> = factors.iter().map(|f| f.mean.as_slice()).collect();
            let seconds: Vec<&Matrix<T>> = factors.iter().map(|f| &f.second).collect();
            let eb = kron_all_vec(&means);
            let ebb = kron_all(&seconds);
            if eb.len() != posterior.dim() {
                return Err(dim_err(
                    "design_moments",
                    format!("core dim {} vs design dim {}", posterior.dim(), eb.len()),
                ));
            }
            let mean = dot(&posterior.mu, &eb);
            // E[a²] = tr(E[bbᵀ](S + μμᵀ)) = tr(E[bbᵀ]S) + μᵀE[bbᵀ]μ
            let second = trace_of_product(&ebb, &posterior.s) + dot(&posterior.mu, &ebb.matvec(&posterior.mu)?);
            Ok(DesignMoments {
                mean,
                second,
                kron: Some((eb, ebb)),
            })
        }
        CoreView::Cp => {
            let r = factors[0].mean.len();
            let mut prod_mean = vec![T::one(); r];
            let mut prod_second = Matrix::from_rows(&vec![vec![T::one(); r]; r]);
            for f in factors {
                if f.mean.len() != r {
                    return Err(dim_err("design_moments", "CP requires equal ranks"));
                }
                for (p, &m) in prod_mean.iter_mut().zip(&f.mean) {
                    *p *= m;
                }
                prod_second = prod_second.hadamard(&f.second)?;
            }
            // a = Σ_r ∏_k U^k_r, so E[a²] sums every entry of ∘_k E[U^k U^kᵀ]
            Ok(DesignMoments {
                mean: prod_mean.into_iter().sum(),
                second: prod_second.as_slice().iter().copied().sum(),
                kron: None,
            })
        }
    }
}

fn trace_of_product<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> T {
    // tr(AB) = Σ_ij A_ij B_ji
    let n = a.rows();
    let mut acc = T::zero();
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Gamma message: `α = 3/2`, `β = ½y² − y E[a] + ½E[a²]` (= ½E[(y − a)²]).
pub fn message_tau<T: Scalar>(y: T, design: &DesignMoments<T>) -> TauMessage<T> {
    let half = T::lit(0.5);
    TauMessage {
        alpha: T::lit(TAU_MESSAGE_SHAPE),
        beta: half * y * y - y * design.mean + half * design.second,
    }
}

/// Gaussian message on `vec(W)`: `Λ = E[τ]E[bbᵀ]`, `η = y E[τ] E[b]`.
pub fn message_w<T: Scalar>(y: T, e_tau: T, design: &DesignMoments<T>) -> Result<GaussianNat<T>> {
    let (eb, ebb) = design
        .kron
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("core messages exist only for Tucker".into()))?;
    Ok(GaussianNat {
        precision: ebb.scale(e_tau),
        shift: eb.iter().map(|&b| y * e_tau * b).collect(),
    })
}

/// Result of merging Gamma messages into `q(τ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauUpdate<T> {
    pub posterior: TauPosterior<T>,
    /// Number of messages whose negative rate was clamped to zero.
    pub clamped: usize,
}

/// `a = a₀ + Σ(α_n − 1)`, `b = b₀ + Σ max(β_n, 0)`.
pub fn update_q_tau<T: Scalar>(a0: T, b0: T, msgs: &[TauMessage<T>]) -> Result<TauUpdate<T>> {
    let mut a = a0;
    let mut b = b0;
    let mut clamped = 0;
    for m in msgs {
        a += m.alpha - T::one();
        if m.beta < T::zero() {
            clamped += 1;
        } else {
            b += m.beta;
        }
    }
    if clamped > 0 {
        log::warn!("clamped {clamped} negative noise-rate messages");
    }
    if !(b > T::zero()) || !b.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise posterior rate is not positive (b={b})"
        )));
    }
    Ok(TauUpdate {
        posterior: TauPosterior::new(a, b)?,
        clamped,
    })
}

/// `q(vec W) ∝ N(0, I) ∏ f_n(W)`.
pub fn update_q_w<T: Scalar>(dim: usize, msgs: &[GaussianNat<T>]) -> Result<CorePosterior<T>> {
    let mut acc = GaussianNat {
        precision: Matrix::identity(dim),
        shift: vec![T::zero(); dim],
    };
    for m in msgs {
        acc.add_assign(m)?;
    }
    acc.precision = acc.precision.symmetrize();
    let GaussianBelief { mean, cov } = acc.to_moments()?;
    Ok(CorePosterior { mu: mean, s: cov })
}

fn check_damping<T: Scalar>(gamma: T) -> Result<()> {
    if !(gamma > T::zero() && gamma <= T::one()) {
        return Err(Error::InvalidArgument(format!(
            "damping must lie in (0, 1], got {gamma}"
        )));
    }
    Ok(())
}

/// `γ·new + (1−γ)·old` in natural parameters.
pub fn damp<T: Scalar>(old: &GaussianNat<T>, new: &GaussianNat<T>, gamma: T) -> Result<GaussianNat<T>> {
    check_damping(gamma)?;
    if gamma == T::one() {
        return Ok(new.clone());
    }
    new.scale(gamma).add(&old.scale(T::one() - gamma))
}

pub fn damp_tau<T: Scalar>(old: &TauMessage<T>, new: &TauMessage<T>, gamma: T) -> Result<TauMessage<T>> {
    check_damping(gamma)?;
    let keep = T::one() - gamma;
    Ok(TauMessage {
        // shapes are all 3/2; keep them bit-exact under damping
        alpha: if new.alpha == old.alpha {
            new.alpha
        } else {
            gamma * new.alpha + keep * old.alpha
        },
        beta: gamma * new.beta + keep * old.beta,
    })
}
