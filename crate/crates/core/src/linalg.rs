//! Dense helpers shared by the solvers and the world generators.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reciprocal condition below which a symmetric system counts as singular.
const RCOND_MIN: f64 = 1e-13;

/// Solves `a x = b` for symmetric `a`. Cholesky when it is clearly positive
/// definite, otherwise an eigen-decomposition decides between "singular" and
/// an LU solve of an indefinite but invertible system.
pub fn solve_symmetric(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let singular = || Error::Singular(format!("{}x{} system", a.nrows(), a.ncols()));
    let diag_max = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(ch) = a.clone().cholesky() {
        let lmin = ch.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if lmin * lmin > RCOND_MIN * diag_max {
            return Ok(ch.solve(b));
        }
    }
    let eig = a.clone().symmetric_eigen();
    let abs: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
    let emax = abs.iter().cloned().fold(0.0, f64::max);
    let emin = abs.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(emax > 0.0) || emin <= RCOND_MIN * emax {
        return Err(singular());
    }
    a.clone()
        .lu()
        .solve(b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(singular)
}

pub fn solve_symmetric_vec(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let x = solve_symmetric(a, &DMatrix::from_column_slice(b.len(), 1, b.as_slice()))?;
    Ok(x.column(0).into_owned())
}

pub fn gaussian_matrix(rng: &mut SeededRng, n: usize, m: usize, std: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}

pub fn gaussian_vector(rng: &mut SeededRng, n: usize, std: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian with sign fix).
pub fn random_orthogonal(rng: &mut SeededRng, n: usize) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, n, n, 1.0);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for k in 0..n {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    q
}

/// Largest eigenvalue of a symmetric matrix.
pub fn top_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Orthonormal basis for the column space of `a` via thin QR.
pub fn orthonormal_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().qr().q()
}

pub fn permutation(rng: &mut SeededRng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

pub fn column_vec(m: &DMatrix<f64>, j: usize) -> Vec<f64> {
    m.column(j).iter().copied().collect()
}
