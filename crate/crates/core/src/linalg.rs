//! Dense helpers shared by the prior fit and the planner.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Solves above this condition estimate are reported as numerical failures.
pub const MAX_CONDITION: f64 = 1e14;

pub(crate) fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::numerical(format!("{what} is not positive definite")))
}

/// Cheap lower bound on the 2-norm condition number from the Cholesky
/// diagonal.
pub(crate) fn condition_estimate(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    let n = l.nrows();
    if n == 0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let d = l[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (hi / lo).powi(2)
}

pub(crate) fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Order-independent sum: sorts before adding so any permutation of the
/// inputs gives a bit-identical result.
pub(crate) fn sorted_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values.iter().sum()
}

/// Posterior covariance `(A^T A / σ² + Γ^{-1})^{-1}` for positive `gamma`.
///
/// Works in the scaled form `G^{1/2} (I + B^T B)^{-1} G^{1/2}` with
/// `B = A G^{1/2} / σ`; when `A` has fewer rows than columns the Woodbury
/// identity moves the solve to the row dimension.
pub(crate) fn posterior_covariance(a: &DMatrix<f64>, gamma: &[f64], sigma2: f64) -> Result<DMatrix<f64>> {
    let d = a.ncols();
    debug_assert_eq!(gamma.len(), d);
    if let Some(j) = gamma.iter().position(|&g| !(g > 0.0 && g.is_finite())) {
        return Err(Error::numerical(format!(
            "prior variance {j} is {}; must be positive",
            gamma[j]
        )));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::numerical(format!("noise variance {sigma2} must be positive")));
    }
    let root: Vec<f64> = gamma.iter().map(|g| g.sqrt()).collect();
    if a.nrows() == 0 {
        return Ok(DMatrix::from_diagonal(&DVector::from_column_slice(gamma)));
    }
    let inv_sigma = 1.0 / sigma2.sqrt();
    let mut b = a.clone();
    for (j, mut col) in b.column_iter_mut().enumerate() {
        col *= root[j] * inv_sigma;
    }
    let dominant = || {
        gamma
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .map(|(j, g)| format!("largest prior variance is entry {j} = {g:e}"))
            .unwrap_or_default()
    };

    let mut inner = if d <= a.nrows() {
        let k = DMatrix::identity(d, d) + b.transpose() * &b;
        let chol = cholesky(k, "scaled posterior precision")?;
        let cond = condition_estimate(&chol);
        if cond > MAX_CONDITION {
            return Err(Error::numerical(format!(
                "posterior precision is ill-conditioned (estimate {cond:e}); {}",
                dominant()
            )));
        }
        chol.inverse()
    } else {
        let rows = a.nrows();
        let s = DMatrix::identity(rows, rows) + &b * b.transpose();
        let chol = cholesky(s, "scaled data covariance")?;
        let cond = condition_estimate(&chol);
        if cond > MAX_CONDITION {
            return Err(Error::numerical(format!(
                "data covariance is ill-conditioned (estimate {cond:e}); {}",
                dominant()
            )));
        }
        let w = chol.solve(&b);
        DMatrix::identity(d, d) - b.transpose() * w
    };
    for i in 0..d {
        for j in 0..d {
            inner[(i, j)] *= root[i] * root[j];
        }
    }
    symmetrize(&mut inner);
    Ok(inner)
}

/// Eigenvalues of a symmetric matrix, descending.
pub(crate) fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Moore-Penrose pseudoinverse with tolerance-based rank truncation.
pub(crate) fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.is_empty() {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON;
    svd.pseudo_inverse(tol)
        .unwrap_or_else(|_| DMatrix::zeros(m.ncols(), m.nrows()))
}
