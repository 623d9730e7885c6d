use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{dim_err, Result};
use crate::scalar::Scalar;

/// Gaussian in moment form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GaussianBelief<T> {
    pub mean: Vec<T>,
    pub cov: Matrix<T>,
}

impl<T: Scalar> GaussianBelief<T> {
    pub fn new(mean: Vec<T>, cov: Matrix<T>) -> Result<Self> {
        if cov.shape() != (mean.len(), mean.len()) {
            return Err(dim_err(
                "GaussianBelief::new",
                format!("mean len {} with cov {:?}", mean.len(), cov.shape()),
            ));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Natural form. Requires a PD covariance.
    pub fn to_natural(&self) -> Result<GaussianNat<T>> {
        let precision = self.cov.spd_inverse()?;
        let shift = precision.matvec(&self.mean)?;
        Ok(GaussianNat { precision, shift })
    }
}

/// Gaussian (possibly improper) in natural form: precision `Λ` and shift `η = Λ·mean`.
///
/// The precision may be rank deficient; such factors act as partial
/// observations and cannot be converted back to moment form on their own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GaussianNat<T> {
    pub precision: Matrix<T>,
    pub shift: Vec<T>,
}

impl<T: Scalar> GaussianNat<T> {
    pub fn new(precision: Matrix<T>, shift: Vec<T>) -> Result<Self> {
        if precision.shape() != (shift.len(), shift.len()) {
            return Err(dim_err(
                "GaussianNat::new",
                format!("shift len {} with precision {:?}", shift.len(), precision.shape()),
            ));
        }
        Ok(Self { precision, shift })
    }

    /// The zero-information factor.
    pub fn zero(dim: usize) -> Self {
        Self {
            precision: Matrix::zeros(dim, dim),
            shift: vec![T::zero(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn to_moments(&self) -> Result<GaussianBelief<T>> {
        let cov = self.precision.spd_inverse_strict()?;
        let mean = cov.matvec(&self.shift)?;
        Ok(GaussianBelief { mean, cov })
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            precision: self.precision.scale(s),
            shift: self.shift.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(dim_err(
                "GaussianNat::add",
                format!("{} vs {}", self.dim(), other.dim()),
            ));
        }
        Ok(Self {
            precision: self.precision.add(&other.precision)?,
            shift: super::vec_add(&self.shift, &other.shift),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(dim_err(
                "GaussianNat::add_assign",
                format!("{} vs {}", self.dim(), other.dim()),
            ));
        }
        self.precision.add_assign(&other.precision)?;
        for (a, &b) in self.shift.iter_mut().zip(&other.shift) {
            *a += b;
        }
        Ok(())
    }
}

/// Product of Gaussian factors: natural parameters add.
///
/// Errors on an empty list (the dimension would be unknown) and on
/// mismatched dimensions.
pub fn gaussian_merge<T: Scalar>(factors: &[GaussianNat<T>]) -> Result<GaussianNat<T>> {
    let (first, rest) = factors
        .split_first()
        .ok_or_else(|| dim_err("gaussian_merge", "no factors"))?;
    let mut acc = first.clone();
    for f in rest {
        acc.add_assign(f)?;
    }
    Ok(acc)
}
