//! Dense reference implementations built on nalgebra. They share nothing with
//! the blockwise estimators beyond the input data.

#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use ris_chest::channel::PriorCovariance;
use ris_chest::{CMatrix, CVector};

pub type DM = DMatrix<Complex64>;

pub fn to_dense(m: &CMatrix) -> DM {
    DM::from_fn(m.rows(), m.cols(), |r, c| m[(r, c)])
}

pub fn vec_to_dense(v: &CVector) -> DM {
    DM::from_column_slice(v.dim(), 1, v.as_slice())
}

pub fn dense_to_vec(d: &DM) -> Vec<Complex64> {
    d.iter().copied().collect()
}

/// `A = Ṽ ⊗ I_M`.
pub fn model_matrix(pattern: &CMatrix, m: usize) -> DM {
    to_dense(pattern).kronecker(&DM::identity(m, m))
}

/// `(AᴴA)^-1 Aᴴ y`.
pub fn ls_oracle(pattern: &CMatrix, m: usize, y: &CVector) -> Vec<Complex64> {
    let a = model_matrix(pattern, m);
    let ah = a.adjoint();
    let gram_inv = (&ah * &a).try_inverse().expect("full column rank");
    dense_to_vec(&(gram_inv * ah * vec_to_dense(y)))
}

/// `C (C + cI)^-1 r` with `C` densified from the structured prior.
pub fn mmse_oracle(prior: &PriorCovariance, c: f64, r: &CVector) -> Vec<Complex64> {
    let cov = dense_prior(prior);
    let n = cov.nrows();
    let shifted = &cov + DM::identity(n, n) * Complex64::new(c, 0.0);
    let inv = shifted.try_inverse().expect("C + cI is positive definite");
    dense_to_vec(&(cov * inv * vec_to_dense(r)))
}

/// Builds `blkdiag(beta_bs I, beta_irs b_n b_nᴴ)` directly from the blocks.
pub fn dense_prior(prior: &PriorCovariance) -> DM {
    let m = prior.antennas;
    let dim = m * (prior.elements() + 1);
    let mut out = DM::zeros(dim, dim);
    for i in 0..m {
        out[(i, i)] = Complex64::new(prior.beta_bs, 0.0);
    }
    for (n, b) in prior.rank_one_blocks.iter().enumerate() {
        let bd = vec_to_dense(b);
        let block = &bd * bd.adjoint() * Complex64::new(prior.beta_irs, 0.0);
        out.view_mut(((n + 1) * m, (n + 1) * m), (m, m)).copy_from(&block);
    }
    out
}

pub fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}
