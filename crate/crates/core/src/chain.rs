//! Gaussian inference along one mode's chain of sorted indexes.
//!
//! Observations arrive as pseudo-observations: Gaussian factors on the
//! projected state `H·Z` at a node, possibly with rank-deficient precision.
//! A forward Kalman pass and a backward RTS pass produce smoothed marginals
//! and lag-one cross-covariances, from which the state at any index can be
//! interpolated exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{BlockSsm, Transition};
use crate::linalg::{vec_add, vec_sub, GaussianBelief, GaussianNat, Matrix};
use crate::scalar::Scalar;

/// Indexes closer than this are the same node.
pub const INDEX_TOLERANCE: f64 = 1e-10;

/// Relative pivot threshold when factoring PSD message precisions.
const PSD_PIVOT_TOL: f64 = 1e-14;

/// Sorts and deduplicates index values. Values within [`INDEX_TOLERANCE`] of
/// the first member of a run collapse onto it.
pub fn unique_sorted<T: Scalar>(values: &[T]) -> Vec<T> {
    let mut v: Vec<T> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite index"));
    let tol = T::lit(INDEX_TOLERANCE);
    let mut out: Vec<T> = Vec::with_capacity(v.len());
    for x in v {
        match out.last() {
            Some(&last) if x - last < tol => {}
            _ => out.push(x),
        }
    }
    out
}

/// Position of `x` among `nodes` (as produced by [`unique_sorted`]).
pub fn node_position<T: Scalar>(nodes: &[T], x: T) -> Option<usize> {
    let tol = T::lit(INDEX_TOLERANCE);
    // first node with n ≥ x − tol; written so that a tolerance below the
    // type's resolution still finds exact matches
    let i = nodes.partition_point(|&n| n < x - tol);
    (i < nodes.len() && (nodes[i] - x).abs() < tol).then_some(i)
}

/// Prior chain over one mode: sorted unique indexes and the transitions
/// between consecutive nodes.
#[derive(Debug, Clone)]
pub struct ModeChain<T> {
    indexes: Vec<T>,
    ssm: BlockSsm<T>,
    transitions: Vec<Transition<T>>,
}

impl<T: Scalar> ModeChain<T> {
    pub fn new(indexes: Vec<T>, ssm: BlockSsm<T>) -> Result<Self> {
        if indexes.is_empty() {
            return Err(Error::Empty("mode chain needs at least one index".into()));
        }
        let tol = T::lit(INDEX_TOLERANCE);
        if indexes.windows(2).any(|w| !(w[1] - w[0] >= tol)) {
            return Err(Error::InvalidArgument(
                "chain indexes must be strictly increasing".into(),
            ));
        }
        let transitions = indexes
            .windows(2)
            .map(|w| ssm.transition(w[1] - w[0]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            indexes,
            ssm,
            transitions,
        })
    }

    pub fn len(&self) -> usize {
        self.indexes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indexes.is_empty()
    }

    pub fn indexes(&self) -> &[T] {
        &self.indexes
    }

    pub fn ssm(&self) -> &BlockSsm<T> {
        &self.ssm
    }

    pub fn h(&self) -> &Matrix<T> {
        &self.ssm.h
    }

    pub fn rank(&self) -> usize {
        self.ssm.rank
    }

    pub fn state_dim(&self) -> usize {
        self.ssm.state_dim()
    }

    /// Transition from node `s` to node `s + 1`.
    pub fn transition(&self, s: usize) -> &Transition<T> {
        &self.transitions[s]
    }

    pub fn transitions(&self) -> &[Transition<T>] {
        &self.transitions
    }

    pub fn prior_belief(&self) -> GaussianBelief<T> {
        GaussianBelief {
            mean: vec![T::zero(); self.state_dim()],
            cov: self.ssm.p_inf.clone(),
        }
    }

    pub fn position(&self, x: T) -> Option<usize> {
        node_position(&self.indexes, x)
    }
}

/// Gaussian factor on `H·Z` at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoObs<T> {
    pub node: usize,
    pub factor: GaussianNat<T>,
}

/// Product of the pseudo-observations at one node. An empty set is the
/// zero-information factor of dimension `rank`.
pub fn merge_node_messages<T: Scalar>(
    node: usize,
    rank: usize,
    msgs: &[PseudoObs<T>],
) -> Result<PseudoObs<T>> {
    let mut factor = GaussianNat::zero(rank);
    for m in msgs {
        if m.node != node {
            return Err(Error::InvalidArgument(format!(
                "message for node {} merged into node {node}",
                m.node
            )));
        }
        factor.add_assign(&m.factor)?;
    }
    Ok(PseudoObs { node, factor })
}

/// Output of the forward pass.
#[derive(Debug, Clone)]
pub struct FilteredChain<T> {
    /// One-step predictions `p(Z_s | obs_{<s})`; node 0 holds the stationary prior.
    pub predicted: Vec<GaussianBelief<T>>,
    pub filtered: Vec<GaussianBelief<T>>,
}

/// Smoothed marginals plus lag-one cross-covariances.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ChainPosterior<T> {
    pub smoothed: Vec<GaussianBelief<T>>,
    /// `cross[s] = Cov(Z_{s+1}, Z_s)`.
    pub cross: Vec<Matrix<T>>,
    #[serde(skip)]
    pub filtered: Vec<GaussianBelief<T>>,
}

/// Folds a (possibly rank-deficient) factor on `H·Z` into a moment-form
/// belief. Equivalent to the information update
/// `V = (V⁻⁻¹ + HᵀΛH)⁻¹`, `m = V(V⁻⁻¹m⁻ + Hᵀη)`, written through a square-root
/// factor `B Bᵀ = Λ` so that neither `V⁻` nor `Λ` is inverted.
fn observe<T: Scalar>(
    prior: &GaussianBelief<T>,
    h: &Matrix<T>,
    obs: &GaussianNat<T>,
) -> Result<GaussianBelief<T>> {
    if obs.precision.max_abs() == T::zero() && obs.shift.iter().all(|&x| x == T::zero()) {
        return Ok(prior.clone());
    }
    let b = obs.precision.psd_factor(T::lit(PSD_PIVOT_TOL))?;
    let vht = prior.cov.matmul(&h.transpose())?; // V⁻Hᵀ
    let vhtb = vht.matmul(&b)?; // V⁻HᵀB
    let bt = b.transpose();
    let inner = bt.matmul(&h.matmul(&vhtb)?)?; // BᵀHV⁻HᵀB
    let s = Matrix::identity(inner.rows()).add(&inner)?.symmetrize();
    let s_inv = s.spd_inverse()?;
    // V = V⁻ − V⁻HᵀB S⁻¹ BᵀHV⁻
    let gain = vhtb.matmul(&s_inv)?;
    let cov = prior
        .cov
        .sub(&gain.matmul(&vhtb.transpose())?)?
        .symmetrize();
    // m = m⁻ + V Hᵀ (η − Λ H m⁻)
    let hm = h.matvec(&prior.mean)?;
    let resid = vec_sub(&obs.shift, &obs.precision.matvec(&hm)?);
    let mean = vec_add(
        &prior.mean,
        &cov.matmul(&h.transpose())?.matvec(&resid)?,
    );
    if cov.diag().iter().any(|&d| d < -T::lit(1e-9) || !d.is_finite()) {
        return Err(Error::NotPositiveDefinite("kalman update"));
    }
    Ok(GaussianBelief { mean, cov })
}

fn predict<T: Scalar>(prev: &GaussianBelief<T>, t: &Transition<T>) -> Result<GaussianBelief<T>> {
    Ok(GaussianBelief {
        mean: t.a.matvec(&prev.mean)?,
        cov: t.a.sandwich(&prev.cov)?.add(&t.q)?.symmetrize(),
    })
}

/// Forward Kalman pass. `obs[s]` is the merged pseudo-observation at node `s`.
pub fn kalman_forward<T: Scalar>(
    chain: &ModeChain<T>,
    obs: &[GaussianNat<T>],
) -> Result<FilteredChain<T>> {
    if obs.len() != chain.len() {
        return Err(Error::InvalidArgument(format!(
            "{} node observations for a chain of {} nodes",
            obs.len(),
            chain.len()
        )));
    }
    let mut predicted = Vec::with_capacity(chain.len());
    let mut filtered: Vec<GaussianBelief<T>> = Vec::with_capacity(chain.len());
    for (s, o) in obs.iter().enumerate() {
        let pred = match filtered.last() {
            None => chain.prior_belief(),
            Some(prev) => predict(prev, chain.transition(s - 1))?,
        };
        let post = observe(&pred, chain.h(), o)?;
        predicted.push(pred);
        filtered.push(post);
    }
    Ok(FilteredChain {
        predicted,
        filtered,
    })
}

/// Backward RTS pass.
pub fn rts_backward<T: Scalar>(
    chain: &ModeChain<T>,
    fwd: FilteredChain<T>,
) -> Result<ChainPosterior<T>> {
    let n = fwd.filtered.len();
    if n != chain.len() {
        return Err(Error::InvalidArgument("filtered pass length mismatch".into()));
    }
    let mut smoothed = fwd.filtered.clone();
    let mut cross = vec![Matrix::zeros(chain.state_dim(), chain.state_dim()); n.saturating_sub(1)];
    for s in (0..n.saturating_sub(1)).rev() {
        let filt = &fwd.filtered[s];
        let pred_next = &fwd.predicted[s + 1];
        let a = &chain.transition(s).a;
        // G = V_s Aᵀ (V⁻_{s+1})⁻¹
        let g = filt
            .cov
            .matmul(&a.transpose())?
            .matmul(&pred_next.cov.spd_inverse()?)?;
        let next = &smoothed[s + 1];
        let mean = vec_add(
            &filt.mean,
            &g.matvec(&vec_sub(&next.mean, &pred_next.mean))?,
        );
        let cov = filt
            .cov
            .add(&g.sandwich(&next.cov.sub(&pred_next.cov)?)?)?
            .symmetrize();
        cross[s] = next.cov.matmul(&g.transpose())?;
        smoothed[s] = GaussianBelief { mean, cov };
    }
    Ok(ChainPosterior {
        smoothed,
        cross,
        filtered: fwd.filtered,
    })
}

/// Forward and backward pass in one call.
pub fn smooth<T: Scalar>(chain: &ModeChain<T>, obs: &[GaussianNat<T>]) -> Result<ChainPosterior<T>> {
    rts_backward(chain, kalman_forward(chain, obs)?)
}

/// How neighbour uncertainty enters interpolation between two nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpolationMode {
    /// Uses the joint posterior of both neighbours, including their
    /// lag-one cross-covariance. Exact for the linear-Gaussian chain.
    #[default]
    Joint,
    /// Treats the two neighbours as independent (drops the cross-covariance).
    Independent,
}

/// Posterior of the state at an arbitrary index `x` (rescaled units).
///
/// Between nodes `s−1 < x < s` the state is conditionally Gaussian given its
/// neighbours, `Z* | Z_{s−1}, Z_s ~ N(G₁Z_{s−1} + G₂Z_s, V*)`, with
/// `(V*)⁻¹ = Q₁⁻¹ + A₂ᵀQ₂⁻¹A₂`. The conditional is computed in its equivalent
/// gain form, `K = Q₁A₂ᵀ(A₂Q₁A₂ᵀ + Q₂)⁻¹`, `G₁ = (I − KA₂)A₁`, `G₂ = K`,
/// `V* = (I − KA₂)Q₁`, which never inverts the near-singular `Q₁`, `Q₂` of
/// tiny gaps. Outside the node range the state is propagated from the nearest
/// endpoint; left of the first node this is the stationary reverse-time step.
pub fn interpolate<T: Scalar>(
    chain: &ModeChain<T>,
    post: &ChainPosterior<T>,
    x: T,
    mode: InterpolationMode,
) -> Result<GaussianBelief<T>> {
    if post.smoothed.len() != chain.len() {
        return Err(Error::InvalidArgument("posterior does not match chain".into()));
    }
    if let Some(s) = chain.position(x) {
        return Ok(post.smoothed[s].clone());
    }
    let idx = chain.indexes();
    let ssm = chain.ssm();
    let j = idx.partition_point(|&n| n < x);
    if j == 0 {
        // left of the first node: Z* ~ N(0, P∞), Z₁ = A Z* + e
        let t = ssm.transition(idx[0] - x)?;
        let p = &ssm.p_inf;
        // B = P∞ Aᵀ P∞⁻¹ maps Z₁ to E[Z* | Z₁]
        let b = p.matmul(&t.a.transpose())?.matmul(&p.spd_inverse()?)?;
        let cond = p.sub(&b.matmul(&t.a)?.matmul(p)?)?;
        let first = &post.smoothed[0];
        return Ok(GaussianBelief {
            mean: b.matvec(&first.mean)?,
            cov: cond.add(&b.sandwich(&first.cov)?)?.symmetrize(),
        });
    }
    if j == idx.len() {
        let t = ssm.transition(x - idx[j - 1])?;
        return predict(&post.smoothed[j - 1], &t);
    }
    let t1 = ssm.transition(x - idx[j - 1])?;
    let t2 = ssm.transition(idx[j] - x)?;
    let (g1, g2, v_star) = bridge(&t1, &t2)?;
    let left = &post.smoothed[j - 1];
    let right = &post.smoothed[j];
    let mean = vec_add(&g1.matvec(&left.mean)?, &g2.matvec(&right.mean)?);
    let mut cov = v_star
        .add(&g1.sandwich(&left.cov)?)?
        .add(&g2.sandwich(&right.cov)?)?;
    if mode == InterpolationMode::Joint {
        // Cov(Z_j, Z_{j−1}) = cross[j−1]
        let c = &post.cross[j - 1];
        let term = g2.matmul(c)?.matmul(&g1.transpose())?;
        cov = cov.add(&term)?.add(&term.transpose())?;
    }
    Ok(GaussianBelief {
        mean,
        cov: cov.symmetrize(),
    })
}

/// Conditional of the bridge state given both neighbours: `(G₁, G₂, V*)`.
fn bridge<T: Scalar>(
    t1: &Transition<T>,
    t2: &Transition<T>,
) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
    let q1a2t = t1.q.matmul(&t2.a.transpose())?;
    let s = t2.a.matmul(&q1a2t)?.add(&t2.q)?.symmetrize();
    let k = q1a2t.matmul(&s.spd_inverse()?)?;
    let n = t1.a.rows();
    let i_ka2 = Matrix::identity(n).sub(&k.matmul(&t2.a)?)?;
    let g1 = i_ka2.matmul(&t1.a)?;
    let v_star = i_ka2.matmul(&t1.q)?.symmetrize();
    Ok((g1, k, v_star))
}
