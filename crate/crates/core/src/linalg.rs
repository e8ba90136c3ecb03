//! Small dense linear-algebra helpers shared by the fitting and control code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    symmetrize(&mut out);
    out
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetrized(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Clamp the spectrum of a symmetric matrix from below.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = symmetrized(m).symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return symmetrized(m);
    }
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let mut out =
        &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    out
}

/// Cholesky factorization with a descriptive error.
pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite(format!(
            "{what}: non-finite entries"
        )));
    }
    Cholesky::new(symmetrized(m)).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

pub fn log_det_from_cholesky(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|d| d.ln())
        .sum::<f64>()
}

/// A square root `L` of a positive semidefinite matrix with `L Lᵀ = m`.
/// Uses Cholesky when possible and falls back to an eigen decomposition,
/// which also covers exactly-zero covariances.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = Cholesky::new(symmetrized(m)) {
        return chol.l();
    }
    let eig = symmetrized(m).symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Sample mean and (biased, 1/N) covariance of row-stacked samples.
pub fn mean_and_covariance(samples: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let d = samples[0].len();
    let n = samples.len() as f64;
    let mut mean = DVector::zeros(d);
    for s in samples {
        mean += s;
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let diff = s - &mean;
        cov.ger(1.0 / n, &diff, &diff, 1.0);
    }
    symmetrize(&mut cov);
    (mean, cov)
}
