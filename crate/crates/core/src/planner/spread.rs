use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::PlannerModel;
use crate::error::{Error, Result};
use crate::linalg;

const SYMMETRY_RTOL: f64 = 1e-10;
const NEGATIVE_EIGEN_TOL: f64 = -1e-10;
const EIGEN_CLAMP: f64 = 1e-300;

/// Scalar summary of a predictive covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SpreadMeasure {
    #[default]
    Trace,
    /// N-th root of the determinant, as the geometric mean of eigenvalues.
    DetRoot,
    MaxEigenvalue,
}

impl std::fmt::Display for SpreadMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SpreadMeasure::Trace => "trace",
            SpreadMeasure::DetRoot => "det-root",
            SpreadMeasure::MaxEigenvalue => "max-eigenvalue",
        })
    }
}

impl std::str::FromStr for SpreadMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trace" => Ok(Self::Trace),
            "det-root" => Ok(Self::DetRoot),
            "max-eigenvalue" => Ok(Self::MaxEigenvalue),
            other => Err(Error::validation(format!("unknown spread measure {other:?}"))),
        }
    }
}

pub fn spread(cov: &DMatrix<f64>, measure: SpreadMeasure) -> Result<f64> {
    if !cov.is_square() || cov.nrows() == 0 {
        return Err(Error::validation("spread needs a non-empty square matrix"));
    }
    let scale = cov.amax().max(f64::MIN_POSITIVE);
    if (cov - cov.transpose()).amax() > SYMMETRY_RTOL * scale {
        return Err(Error::validation("covariance is not symmetric"));
    }
    match measure {
        SpreadMeasure::Trace => Ok(cov.trace()),
        _ => from_eigenvalues(&linalg::symmetric_eigenvalues(cov), measure),
    }
}

fn from_eigenvalues(ev: &[f64], measure: SpreadMeasure) -> Result<f64> {
    if let Some(bad) = ev.iter().find(|&&l| l < NEGATIVE_EIGEN_TOL) {
        return Err(Error::numerical(format!("covariance has eigenvalue {bad:e}")));
    }
    Ok(match measure {
        SpreadMeasure::Trace => ev.iter().sum(),
        SpreadMeasure::DetRoot => {
            let mean_log = ev.iter().map(|l| l.max(EIGEN_CLAMP).ln()).sum::<f64>() / ev.len() as f64;
            mean_log.exp()
        }
        SpreadMeasure::MaxEigenvalue => ev.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0),
    })
}

/// Spread of `σ² I_N + A Σ_x A^T` through the `D × D` core: the non-zero
/// eigenvalues of `A Σ_x A^T` are those of `L^T A^T A L` with `Σ_x = L L^T`.
pub(crate) fn spread_of_amplitude_covariance(
    model: &PlannerModel,
    cov_x: &DMatrix<f64>,
    measure: SpreadMeasure,
) -> Result<f64> {
    if measure == SpreadMeasure::Trace {
        return Ok(model.trace_of(cov_x));
    }
    let n = model.n();
    let chol = linalg::cholesky(cov_x.clone(), "amplitude covariance")?;
    let l = chol.l();
    let mut core = l.transpose() * model.ata() * &l;
    linalg::symmetrize(&mut core);
    let mut ev = linalg::symmetric_eigenvalues(&core);
    ev.truncate(n);
    ev.resize(n, 0.0);
    for v in ev.iter_mut() {
        *v = v.max(0.0) + model.sigma2();
    }
    from_eigenvalues(&ev, measure)
}
