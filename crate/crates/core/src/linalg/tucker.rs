use serde::{Deserialize, Serialize};

use super::matrix::{dot, kron, kron_vec, Matrix};
use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;

/// Dense Tucker core of shape `r_1 × … × r_K`.
///
/// Values are stored as `vec(W)` with the LAST mode varying fastest, so that
/// `vec(W)ᵀ (u¹ ⊗ … ⊗ u^K)` uses the ordinary Kronecker product. The mode-k
/// unfolding orders its columns with mode 1 fastest, which pairs it with the
/// reversed product `u^K ⊗ … ⊗ u^{k+1} ⊗ u^{k-1} ⊗ … ⊗ u¹`. Both forms give
/// the same scalar for any core and factor vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TuckerCore<T> {
    ranks: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> TuckerCore<T> {
    pub fn from_vec(ranks: Vec<usize>, values: Vec<T>) -> Result<Self> {
        if ranks.is_empty() || ranks.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid core ranks {ranks:?}")));
        }
        let size: usize = ranks.iter().product();
        if values.len() != size {
            return Err(dim_err(
                "TuckerCore::from_vec",
                format!("{} values for ranks {ranks:?}", values.len()),
            ));
        }
        Ok(Self { ranks, values })
    }

    pub fn zeros(ranks: Vec<usize>) -> Result<Self> {
        let size = ranks.iter().product();
        Self::from_vec(ranks, vec![T::zero(); size])
    }

    /// Superdiagonal core with ones on the diagonal: the CP special case.
    pub fn identity_diagonal(rank: usize, modes: usize) -> Result<Self> {
        let mut core = Self::zeros(vec![rank; modes])?;
        let strides = core.strides();
        let step: usize = strides.iter().sum();
        for r in 0..rank {
            core.values[r * step] = T::one();
        }
        Ok(core)
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn modes(&self) -> usize {
        self.ranks.len()
    }

    pub fn vec(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.ranks.len()];
        for j in (0..self.ranks.len().saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * self.ranks[j + 1];
        }
        strides
    }

    /// Element at a multi-index.
    pub fn get(&self, idx: &[usize]) -> T {
        let off: usize = idx.iter().zip(self.strides()).map(|(i, s)| i * s).sum();
        self.values[off]
    }

    /// Mode-`k` unfolding `W_(k)` (zero-based `k`), shape `r_k × ∏_{j≠k} r_j`.
    pub fn mode_unfold(&self, k: usize) -> Result<Matrix<T>> {
        let nmodes = self.modes();
        if k >= nmodes {
            return Err(Error::InvalidArgument(format!(
                "mode {k} out of range for a {nmodes}-mode core"
            )));
        }
        let rk = self.ranks[k];
        let cols = self.values.len() / rk;
        let mut out = Matrix::zeros(rk, cols);
        let mut idx = vec![0usize; nmodes];
        for &v in &self.values {
            // column index with mode 1 fastest among j != k
            let mut col = 0;
            let mut mult = 1;
            for j in 0..nmodes {
                if j != k {
                    col += idx[j] * mult;
                    mult *= self.ranks[j];
                }
            }
            out[(idx[k], col)] = v;
            // advance multi-index, last mode fastest
            for j in (0..nmodes).rev() {
                idx[j] += 1;
                if idx[j] < self.ranks[j] {
                    break;
                }
                idx[j] = 0;
            }
        }
        Ok(out)
    }

    /// `vec(W)ᵀ (u¹ ⊗ … ⊗ u^K)`.
    pub fn contract(&self, factors: &[&[T]]) -> Result<T> {
        self.check_factors(factors)?;
        Ok(dot(&self.values, &super::kron_all_vec(factors)))
    }

    fn check_factors(&self, factors: &[&[T]]) -> Result<()> {
        if factors.len() != self.modes()
            || factors.iter().zip(&self.ranks).any(|(f, &r)| f.len() != r)
        {
            return Err(dim_err(
                "TuckerCore::contract",
                format!(
                    "factor lengths {:?} vs ranks {:?}",
                    factors.iter().map(|f| f.len()).collect::<Vec<_>>(),
                    self.ranks
                ),
            ));
        }
        Ok(())
    }
}

/// `v_K ⊗ … ⊗ v_{k+1} ⊗ v_{k-1} ⊗ … ⊗ v_1`, the ordering paired with `W_(k)`.
pub fn kron_vec_reversed_excluding<T: Scalar>(vs: &[&[T]], k: usize) -> Vec<T> {
    vs.iter()
        .enumerate()
        .rev()
        .filter(|&(j, _)| j != k)
        .fold(vec![T::one()], |acc, (_, v)| kron_vec(&acc, v))
}

/// Matrix analogue of [`kron_vec_reversed_excluding`].
pub fn kron_reversed_excluding<T: Scalar>(ms: &[&Matrix<T>], k: usize) -> Matrix<T> {
    ms.iter()
        .enumerate()
        .rev()
        .filter(|&(j, _)| j != k)
        .fold(Matrix::identity(1), |acc, (_, m)| kron(&acc, m))
}
