//! Small dense helpers shared by the solvers.

// float methods under no_std; unused when a dependency pulls in std
#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// (M + Mᵀ)/2.
pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()))
}

/// Cholesky factor L with M = LLᵀ, or `SingularKernel` if M is not positive definite.
pub fn cholesky(m: &Mat, what: &str) -> Result<Mat> {
    m.clone()
        .cholesky()
        .map(|c| c.unpack())
        .ok_or_else(|| Error::SingularKernel(format!("{what} is not positive definite")))
}

pub fn spd_inverse(m: &Mat, what: &str) -> Result<Mat> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularKernel(format!("{what} is not positive definite")))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Inverse and log-determinant from one factorization.
pub fn spd_inverse_logdet(m: &Mat, what: &str) -> Result<(Mat, f64)> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularKernel(format!("{what} is not positive definite")))?;
    let l = chol.l_dirty();
    let mut logdet = 0.0;
    for i in 0..m.nrows() {
        let d = l[(i, i)];
        if d <= 1e-150 {
            return Err(Error::SingularKernel(format!("{what} has vanishing determinant")));
        }
        logdet += 2.0 * d.ln();
    }
    Ok((symmetrize(&chol.inverse()), logdet))
}

pub fn eigenvalues(m: &Mat) -> Vec<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    eig.eigenvalues.iter().copied().collect()
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    eigenvalues(m).into_iter().fold(f64::INFINITY, f64::min)
}

/// Clip the spectrum of a symmetric matrix from below.
pub fn project_psd(m: &Mat, floor: f64) -> Mat {
    let eig = symmetrize(m).symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return symmetrize(m);
    }
    let mut vals = eig.eigenvalues.clone();
    for l in vals.iter_mut() {
        if *l < floor {
            *l = floor;
        }
    }
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&vals) * v.transpose()))
}

/// Dense LU solve, `SingularSystem` on a (numerically) singular matrix.
pub fn solve_dense(a: &Mat, b: &nalgebra::DVector<f64>) -> Result<nalgebra::DVector<f64>> {
    let lu = a.clone().lu();
    let scale = max_abs(a).max(1e-300);
    let u = lu.u();
    let min_pivot = (0..u.nrows()).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-13 * scale) {
        return Err(Error::SingularSystem);
    }
    lu.solve(b).ok_or(Error::SingularSystem)
}

/// Upper-triangle entries (i ≤ j), row-major.
pub fn vech(m: &Mat) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Inverse of [`vech`]: fills a symmetric matrix.
pub fn unvech(v: &[f64], n: usize) -> Mat {
    let mut m = Mat::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
            k += 1;
        }
    }
    m
}

/// Symmetric basis matrix with ones at (i, j) and (j, i).
pub fn sym_basis(n: usize, i: usize, j: usize) -> Mat {
    let mut m = Mat::zeros(n, n);
    m[(i, j)] = 1.0;
    m[(j, i)] = 1.0;
    m
}

/// Lower-triangle entries (i ≥ j), row-major.
pub fn tril_vec(m: &Mat) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in 0..=i {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn tril_mat(v: &[f64], n: usize) -> Mat {
    let mut m = Mat::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in 0..=i {
            m[(i, j)] = v[k];
            k += 1;
        }
    }
    m
}
