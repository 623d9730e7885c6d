//! Dense linear algebra for the small matrices the model works with:
//! Kronecker/Hadamard products, Tucker-core unfolding and Gaussian
//! natural-parameter algebra.

mod gaussian;
mod matrix;
mod tucker;

pub use gaussian::{gaussian_merge, GaussianBelief, GaussianNat};
pub use matrix::{
    blockdiag, dot, hadamard, kron, kron_all, kron_all_vec, kron_vec, max_abs_diff, vec_add,
    vec_scale, vec_sub, Matrix, PSD_JITTER,
};
pub use tucker::{kron_reversed_excluding, kron_vec_reversed_excluding, TuckerCore};
