//! Posterior under partial labeling and the choice of which frames to label.
//!
//! With a label set `J`, the amplitude posterior only sees the rows `A_J`:
//! `Σ_x^{(J)} = (A_J^T A_J / σ² + Γ^{-1})^{-1}`. Neither this covariance nor
//! the predictive covariance over the whole series depends on the labeled
//! values, so a labeling order can be planned before any frame is labeled.

mod exhaustive;
mod gain;
mod greedy;
mod spread;
mod wsc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{LabelSet, TimeGrid, TransferMatrix, FrequencyGrid};
use crate::sbl::PrunedModel;

pub use exhaustive::{exhaustive_plan, ExhaustiveResult, DEFAULT_SUBSET_BUDGET};
pub use gain::{marginal_gain_fast, GainState, REFRESH_INTERVAL};
pub use greedy::{greedy_plan, greedy_step, Direction, GreedyStep, LabelPlan, TIE_RTOL};
pub use spread::{spread, SpreadMeasure};
pub use wsc::{
    bound_check, estimate_wsc, exact_wsc, trace_gain, BoundReport, ExactWsc, WscEstimate,
    EXACT_WSC_MAX_N,
};

pub(crate) use spread::spread_of_amplitude_covariance;

/// Pruned linear model used for planning: `A` is `N × D` with `D = 2K + 1`.
#[derive(Debug, Clone)]
pub struct PlannerModel {
    transfer: TransferMatrix,
    gamma: Vec<f64>,
    alpha: Vec<f64>,
    sigma2: f64,
    ata: DMatrix<f64>,
}

impl PlannerModel {
    /// `alpha` holds the DC variance followed by one variance per kept
    /// frequency of `transfer`; all must be strictly positive.
    pub fn new(transfer: TransferMatrix, alpha: Vec<f64>, sigma2: f64) -> Result<Self> {
        if alpha.len() != transfer.m() + 1 {
            return Err(Error::validation(format!(
                "{} variances for {} frequencies",
                alpha.len(),
                transfer.m() + 1
            )));
        }
        if let Some((k, a)) = alpha.iter().enumerate().find(|(_, a)| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::validation(format!(
                "planner variance {k} is {a}; zero variances must be pruned first"
            )));
        }
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(Error::validation(format!("noise variance must be > 0, got {sigma2}")));
        }
        let mut gamma = alpha.clone();
        gamma.extend_from_slice(&alpha[1..]);
        let ata = transfer.entries().transpose() * transfer.entries();
        Ok(Self {
            transfer,
            gamma,
            alpha,
            sigma2,
            ata,
        })
    }

    pub fn from_pruned(pruned: &PrunedModel) -> Result<Self> {
        Self::new(pruned.transfer.clone(), pruned.hyper.alpha.clone(), pruned.hyper.sigma2)
    }

    /// Builds `A` on `time_grid` for the kept frequencies (DC first).
    pub fn from_frequencies(time_grid: &TimeGrid, frequencies: Vec<f64>, alpha: Vec<f64>, sigma2: f64) -> Result<Self> {
        let fg = FrequencyGrid::from_frequencies(frequencies)?;
        Self::new(TransferMatrix::new(time_grid, &fg), alpha, sigma2)
    }

    pub fn transfer(&self) -> &TransferMatrix {
        &self.transfer
    }

    pub fn a(&self) -> &DMatrix<f64> {
        self.transfer.entries()
    }

    pub fn ata(&self) -> &DMatrix<f64> {
        &self.ata
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn n(&self) -> usize {
        self.transfer.nrows()
    }

    pub fn d(&self) -> usize {
        self.transfer.ncols()
    }

    pub fn times(&self) -> &[f64] {
        self.transfer.time_grid().times()
    }

    /// `tr(Σ_y) = N σ² + tr(A Γ A^T)`, the spread before any label.
    pub fn prior_trace(&self) -> f64 {
        let n = self.n() as f64;
        n * self.sigma2 + (0..self.d()).map(|j| self.gamma[j] * self.ata[(j, j)]).sum::<f64>()
    }

    /// `N σ² + tr(Σ_x A^T A)` for an amplitude covariance.
    pub fn trace_of(&self, cov_x: &DMatrix<f64>) -> f64 {
        self.n() as f64 * self.sigma2 + cov_x.component_mul(&self.ata).sum()
    }

    pub(crate) fn restricted_covariance(&self, labels: &LabelSet) -> Result<DMatrix<f64>> {
        let aj = self.transfer.restrict_rows(labels)?;
        linalg::posterior_covariance(&aj, &self.gamma, self.sigma2)
    }
}

#[derive(Debug, Clone)]
pub struct RestrictedPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub labels: LabelSet,
}

#[derive(Debug, Clone)]
pub struct PredictiveDistribution {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Amplitude posterior given the labeled frames `labels` and, optionally,
/// their values (in label order). Without values the mean is zero.
pub fn restricted_posterior(
    model: &PlannerModel,
    labels: &LabelSet,
    values: Option<&[f64]>,
) -> Result<RestrictedPosterior> {
    let aj = model.transfer.restrict_rows(labels)?;
    let covariance = linalg::posterior_covariance(&aj, &model.gamma, model.sigma2)?;
    let mean = match values {
        Some(v) => {
            if v.len() != labels.len() {
                return Err(Error::validation(format!(
                    "{} values for {} labels",
                    v.len(),
                    labels.len()
                )));
            }
            if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                return Err(Error::validation(format!("label value {bad} is not finite")));
            }
            let y = DVector::from_column_slice(v);
            &covariance * (aj.transpose() * y) / model.sigma2
        }
        None => DVector::zeros(model.d()),
    };
    Ok(RestrictedPosterior {
        mean,
        covariance,
        labels: labels.clone(),
    })
}

/// Predictive distribution over the full series: mean `A μ`, covariance
/// `σ² I + A Σ A^T`.
pub fn predictive(model: &PlannerModel, rp: &RestrictedPosterior) -> PredictiveDistribution {
    let a = model.a();
    let n = model.n();
    let mean = a * &rp.mean;
    let mut covariance = a * &rp.covariance * a.transpose();
    for i in 0..n {
        covariance[(i, i)] += model.sigma2;
    }
    linalg::symmetrize(&mut covariance);
    PredictiveDistribution { mean, covariance }
}

/// Diagonal of the predictive covariance without forming the `N × N` matrix.
pub fn predictive_variance(model: &PlannerModel, cov_x: &DMatrix<f64>) -> Vec<f64> {
    let a = model.a();
    (0..model.n())
        .map(|k| {
            let row = a.row(k).transpose();
            model.sigma2 + row.dot(&(cov_x * &row))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_frequency_grid, build_time_grid};

    fn toy() -> PlannerModel {
        let tg = build_time_grid(10, 4.0).unwrap();
        let fg = FrequencyGrid::from_frequencies(vec![0.0, 0.3, 0.9]).unwrap();
        PlannerModel::new(TransferMatrix::new(&tg, &fg), vec![2.0, 1.0, 0.25], 0.1).unwrap()
    }

    #[test]
    fn empty_labels_return_the_prior() {
        let m = toy();
        let rp = restricted_posterior(&m, &LabelSet::empty(), None).unwrap();
        assert_eq!(rp.mean, DVector::zeros(5));
        let gamma = DMatrix::from_diagonal(&DVector::from_column_slice(m.gamma()));
        assert_eq!(rp.covariance, gamma);
        let pred = predictive(&m, &rp);
        let sy = m.a() * &gamma * m.a().transpose() + DMatrix::identity(10, 10) * 0.1;
        assert!((pred.covariance - sy).norm() < 1e-12);
    }

    #[test]
    fn zero_amplitude_covariance_leaves_noise() {
        let m = toy();
        let rp = RestrictedPosterior {
            mean: DVector::zeros(5),
            covariance: DMatrix::zeros(5, 5),
            labels: LabelSet::empty(),
        };
        let pred = predictive(&m, &rp);
        assert_eq!(pred.covariance, DMatrix::identity(10, 10) * 0.1);
    }

    #[test]
    fn covariance_ignores_values() {
        let m = toy();
        let j = LabelSet::new(vec![7, 2, 4], 10).unwrap();
        let a = restricted_posterior(&m, &j, Some(&[1.0, -2.0, 0.5])).unwrap();
        let b = restricted_posterior(&m, &j, Some(&[100.0, 3.0, -7.0])).unwrap();
        let c = restricted_posterior(&m, &j, None).unwrap();
        assert_eq!(a.covariance, b.covariance);
        assert_eq!(a.covariance, c.covariance);
    }

    #[test]
    fn rejects_zero_variance_and_bad_values() {
        let tg = build_time_grid(5, 1.0).unwrap();
        let fg = build_frequency_grid(1, 0.1).unwrap();
        assert!(PlannerModel::new(TransferMatrix::new(&tg, &fg), vec![1.0, 0.0], 1.0).is_err());
        let m = toy();
        let j = LabelSet::new(vec![1], 10).unwrap();
        assert!(restricted_posterior(&m, &j, Some(&[f64::NAN])).is_err());
        assert!(restricted_posterior(&m, &j, Some(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn variance_diagonal_matches_full_predictive() {
        let m = toy();
        let j = LabelSet::new(vec![0, 5], 10).unwrap();
        let rp = restricted_posterior(&m, &j, Some(&[0.3, 0.1])).unwrap();
        let pred = predictive(&m, &rp);
        let diag = predictive_variance(&m, &rp.covariance);
        for (k, v) in diag.iter().enumerate() {
            assert!((v - pred.covariance[(k, k)]).abs() < 1e-12);
        }
        assert!((m.trace_of(&rp.covariance) - pred.covariance.trace()).abs() < 1e-10);
    }
}
