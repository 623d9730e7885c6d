use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;

/// Jitter added to the diagonal when a Cholesky factorization fails.
pub const PSD_JITTER: f64 = 1e-9;

/// Dense row-major matrix with explicit dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(dim_err(
                "Matrix::new",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from nested rows. Panics on ragged input; meant for
    /// literals in tests and closed-form constructors.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn column(v: &[T]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    pub fn outer(u: &[T], v: &[T]) -> Self {
        let mut data = Vec::with_capacity(u.len() * v.len());
        for &a in u {
            data.extend(v.iter().map(|&b| a * b));
        }
        Self {
            rows: u.len(),
            cols: v.len(),
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn diag(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn trace(&self) -> T {
        self.diag().into_iter().sum()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    fn check_same(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(dim_err(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other, "add")?;
        Ok(self.zip_with(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same(other, "sub")?;
        Ok(self.zip_with(other, |a, b| a - b))
    }

    /// Element-wise (Hadamard) product of equally shaped matrices.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.check_same(other, "hadamard")?;
        Ok(self.zip_with(other, |a, b| a * b))
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(dim_err(
                "matmul",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if self.cols != v.len() {
            return Err(dim_err(
                "matvec",
                format!("{:?} x len {}", self.shape(), v.len()),
            ));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `self * m * selfᵀ`, the congruence used for covariance propagation.
    pub fn sandwich(&self, m: &Self) -> Result<Self> {
        self.matmul(m)?.matmul(&self.transpose())
    }

    /// `(M + Mᵀ)/2`.
    pub fn symmetrize(&self) -> Self {
        let half = T::lit(0.5);
        let mut s = self.clone();
        for i in 0..self.rows {
            for j in 0..i {
                let v = (self[(i, j)] + self[(j, i)]) * half;
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        s
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    /// `‖M − Mᵀ‖∞` elementwise.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in 0..self.cols.min(self.rows) {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// Lower-triangular Cholesky factor of a symmetric PD matrix.
    pub fn cholesky(&self) -> Result<Self> {
        if !self.is_square() {
            return Err(dim_err("cholesky", format!("{:?}", self.shape())));
        }
        let n = self.rows;
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite("cholesky"));
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(l)
    }

    /// Cholesky with a single retry at `M + εI`, ε scaled by the mean diagonal.
    pub fn cholesky_jittered(&self) -> Result<Self> {
        match self.cholesky() {
            Ok(l) => Ok(l),
            Err(Error::NotPositiveDefinite(_)) => {
                let n = self.rows.max(1);
                let scale = (self.trace().abs() / T::from_usize_lossy(n)).max(T::one());
                let eps = T::lit(PSD_JITTER) * scale;
                let mut m = self.clone();
                for i in 0..self.rows {
                    m[(i, i)] += eps;
                }
                m.cholesky()
            }
            Err(e) => Err(e),
        }
    }

    /// Inverse of a symmetric PD matrix through its Cholesky factor, with
    /// jitter fallback.
    pub fn spd_inverse(&self) -> Result<Self> {
        Ok(Self::inverse_from_cholesky(&self.cholesky_jittered()?))
    }

    /// Like [`Matrix::spd_inverse`] but without jitter: singular input is an error.
    pub fn spd_inverse_strict(&self) -> Result<Self> {
        Ok(Self::inverse_from_cholesky(&self.cholesky()?))
    }

    fn inverse_from_cholesky(l: &Self) -> Self {
        let n = l.rows;
        let mut inv = Self::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = T::zero());
            e[j] = T::one();
            let col = chol_solve(l, &e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv.symmetrize()
    }

    /// Solves `self · x = b` for symmetric PD `self`.
    pub fn spd_solve(&self, b: &[T]) -> Result<Vec<T>> {
        if b.len() != self.rows {
            return Err(dim_err("spd_solve", format!("{:?} vs {}", self.shape(), b.len())));
        }
        let l = self.cholesky_jittered()?;
        Ok(chol_solve(&l, b))
    }

    /// Factor `B` with `B Bᵀ = self` for a symmetric PSD matrix, possibly rank
    /// deficient. Pivots below `rel_tol · max diag` are treated as zero; a
    /// clearly negative pivot means the input is not PSD.
    pub fn psd_factor(&self, rel_tol: T) -> Result<Self> {
        if !self.is_square() {
            return Err(dim_err("psd_factor", format!("{:?}", self.shape())));
        }
        let n = self.rows;
        let max_diag = self.diag().into_iter().fold(T::zero(), |m, d| m.max(d.abs()));
        let tol = rel_tol * max_diag;
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !d.is_finite() || d < -tol.max(T::min_positive_value()) * T::lit(1e3) {
                return Err(Error::NotPositiveDefinite("psd_factor"));
            }
            if d <= tol {
                continue;
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(l)
    }

    /// Block-diagonal matrix with `copies` repetitions of `self`.
    pub fn repeat_blockdiag(&self, copies: usize) -> Self {
        blockdiag(&vec![self.clone(); copies])
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

fn chol_solve<T: Scalar>(l: &Matrix<T>, b: &[T]) -> Vec<T> {
    let n = l.rows();
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Kronecker product `A ⊗ B`.
pub fn kron<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Matrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Kronecker product of vectors, `u ⊗ v`: the last factor varies fastest.
pub fn kron_vec<T: Scalar>(u: &[T], v: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(u.len() * v.len());
    for &a in u {
        out.extend(v.iter().map(|&b| a * b));
    }
    out
}

/// `v₁ ⊗ v₂ ⊗ … ⊗ vₙ`; the empty product is `[1]`.
pub fn kron_all_vec<T: Scalar>(vs: &[&[T]]) -> Vec<T> {
    vs.iter()
        .fold(vec![T::one()], |acc, v| kron_vec(&acc, v))
}

/// `M₁ ⊗ M₂ ⊗ … ⊗ Mₙ`; the empty product is the 1×1 identity.
pub fn kron_all<T: Scalar>(ms: &[&Matrix<T>]) -> Matrix<T> {
    ms.iter()
        .fold(Matrix::identity(1), |acc, m| kron(&acc, m))
}

pub fn hadamard<T: Scalar>(u: &[T], v: &[T]) -> Result<Vec<T>> {
    if u.len() != v.len() {
        return Err(dim_err("hadamard", format!("{} vs {}", u.len(), v.len())));
    }
    Ok(u.iter().zip(v).map(|(&a, &b)| a * b).collect())
}

pub fn blockdiag<T: Scalar>(blocks: &[Matrix<T>]) -> Matrix<T> {
    let rows = blocks.iter().map(Matrix::rows).sum();
    let cols = blocks.iter().map(Matrix::cols).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        for i in 0..b.rows() {
            for j in 0..b.cols() {
                out[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
        r0 += b.rows();
        c0 += b.cols();
    }
    out
}

pub fn vec_add<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

pub fn vec_sub<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

pub fn vec_scale<T: Scalar>(a: &[T], s: T) -> Vec<T> {
    a.iter().map(|&x| x * s).collect()
}

pub fn max_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}
