//! Sparse Bayesian learning of the frequency prior.
//!
//! Every frequency `m >= 1` gets one variance `α_m` shared by its cosine and
//! sine amplitude (which keeps the prior uniform in phase) and by all slices.
//! The DC amplitude has its own `α_0`. The variances and the noise level are
//! fitted by evidence maximization with MacKay fixed-point updates; variances
//! that collapse towards zero mark frequencies that can be pruned.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Dataset, TransferMatrix};

/// Default pruning ratio relative to the largest non-DC variance.
pub const DEFAULT_PRUNE_RATIO: f64 = 0.01;

/// Variances below `ALPHA_FLOOR * max α` are clamped during the fit.
pub const ALPHA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// `α_0` (DC) followed by `α_1..α_M`.
    pub alpha: Vec<f64>,
    pub sigma2: f64,
}

impl HyperParams {
    pub fn new(alpha: Vec<f64>, sigma2: f64) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::validation("alpha must contain at least the DC variance"));
        }
        if let Some(a) = alpha.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::validation(format!("prior variances must be >= 0, got {a}")));
        }
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(Error::validation(format!("noise variance must be > 0, got {sigma2}")));
        }
        Ok(Self { alpha, sigma2 })
    }

    pub fn m(&self) -> usize {
        self.alpha.len() - 1
    }

    /// `γ = [α_0, α_1..α_M, α_1..α_M]`.
    pub fn gamma_vector(&self) -> Vec<f64> {
        let mut g = self.alpha.clone();
        g.extend_from_slice(&self.alpha[1..]);
        g
    }
}

#[derive(Debug, Clone)]
pub struct AmplitudePosterior {
    /// `(2M+1) × L`, one column per slice.
    pub mean: DMatrix<f64>,
    /// `(2M+1) × (2M+1)`, shared by all slices.
    pub covariance: DMatrix<f64>,
    /// `1 - Σ_ii / γ_i` evaluated without cancellation, when known.
    determinedness: Option<Vec<f64>>,
}

impl AmplitudePosterior {
    pub fn new(mean: DMatrix<f64>, covariance: DMatrix<f64>) -> Self {
        Self {
            mean,
            covariance,
            determinedness: None,
        }
    }
}

/// Numerator of the variance update for paired frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateVariant {
    /// `‖(μ)_m‖² + ‖(μ)_{m+M}‖²`, summed squared row norms.
    #[default]
    RowSum,
    /// `‖(μ)_m + (μ)_{m+M}‖²`, norm of the summed rows.
    PairedSum,
}

/// Denominator of the variance update for paired frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DenominatorForm {
    /// `L (2 - (Σ_mm + Σ_{m+M,m+M}) / α_m)`: one unit per amplitude row.
    #[default]
    PerRow,
    /// `L (1 - (Σ_mm + Σ_{m+M,m+M}) / α_m)`. Turns negative once a pair is
    /// poorly determined, so the fit aborts with it on most real problems.
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub sigma2_init: f64,
    pub alpha_init: f64,
    pub eps_min: f64,
    pub max_iter: usize,
    /// Model order used by the noise update; chosen per iteration if unset.
    pub k_order: Option<usize>,
    pub update_variant: UpdateVariant,
    pub denominator: DenominatorForm,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            sigma2_init: 0.2,
            alpha_init: 1.0,
            eps_min: 1e-4,
            max_iter: 1000,
            k_order: None,
            update_variant: UpdateVariant::RowSum,
            denominator: DenominatorForm::PerRow,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::validation(format!("{name} must be positive, got {v}")))
            }
        };
        positive("sigma2_init", self.sigma2_init)?;
        positive("alpha_init", self.alpha_init)?;
        positive("eps_min", self.eps_min)?;
        if self.max_iter == 0 {
            return Err(Error::validation("max_iter must be at least 1"));
        }
        if self.k_order == Some(0) {
            return Err(Error::validation("k_order must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorFit {
    pub hyper: HyperParams,
    pub iterations_used: usize,
    pub final_epsilon: f64,
    pub converged: bool,
    /// Evidence of the hyperparameters entering each iteration.
    pub evidence_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PrunedModel {
    pub kept_frequency_indices: Vec<usize>,
    pub transfer: TransferMatrix,
    pub hyper: HyperParams,
    pub threshold_ratio: f64,
}

impl PrunedModel {
    pub fn kept_frequencies(&self) -> &[f64] {
        self.transfer.freq_grid().frequencies()
    }
}

fn check_shapes(a: &TransferMatrix, y: &DMatrix<f64>, hyper: &HyperParams) -> Result<()> {
    if a.nrows() != y.nrows() {
        return Err(Error::validation(format!(
            "transfer matrix has {} rows but data has {}",
            a.nrows(),
            y.nrows()
        )));
    }
    if hyper.m() != a.m() {
        return Err(Error::validation(format!(
            "{} variances for a grid with {} frequencies",
            hyper.alpha.len(),
            a.m() + 1
        )));
    }
    Ok(())
}

/// Amplitude posterior: `Σ_x = (A^T A / σ² + Γ^{-1})^{-1}`,
/// `μ_x = Γ A^T Σ_y^{-1} Y = Σ_x A^T Y / σ²`.
pub fn posterior(a: &TransferMatrix, y: &Dataset, hyper: &HyperParams) -> Result<AmplitudePosterior> {
    check_shapes(a, y.values(), hyper)?;
    posterior_raw(a.entries(), y.values(), &hyper.gamma_vector(), hyper.sigma2)
}

pub(crate) fn posterior_raw(
    a: &DMatrix<f64>,
    y: &DMatrix<f64>,
    gamma: &[f64],
    sigma2: f64,
) -> Result<AmplitudePosterior> {
    let covariance = linalg::posterior_covariance(a, gamma, sigma2)?;
    // Column by column so each slice's mean does not depend on its position.
    let at = a.transpose();
    let mut mean = DMatrix::zeros(a.ncols(), y.ncols());
    for (l, col) in y.column_iter().enumerate() {
        let aty: DVector<f64> = &at * col;
        let mu = &covariance * aty / sigma2;
        mean.set_column(l, &mu);
    }
    let determinedness = determinedness(a, sigma2, &covariance);
    Ok(AmplitudePosterior {
        mean,
        covariance,
        determinedness: Some(determinedness),
    })
}

/// `1 - Σ_ii / γ_i`, evaluated as `(A^T A Σ)_ii / σ²`. Every term carries the
/// factor `γ_i`, so the value keeps its relative accuracy when `γ_i` is tiny.
fn determinedness(a: &DMatrix<f64>, sigma2: f64, cov: &DMatrix<f64>) -> Vec<f64> {
    let ata = a.transpose() * a;
    (0..cov.nrows())
        .map(|i| (ata.row(i).transpose().dot(&cov.column(i)) / sigma2).max(0.0))
        .collect()
}

/// MacKay fixed-point update of the variances.
pub fn update_alpha(
    post: &AmplitudePosterior,
    hyper: &HyperParams,
    l: usize,
    variant: UpdateVariant,
    denominator: DenominatorForm,
) -> Result<Vec<f64>> {
    let m = hyper.m();
    let d = 2 * m + 1;
    if post.mean.nrows() != d || post.covariance.nrows() != d || post.covariance.ncols() != d {
        return Err(Error::validation(format!(
            "posterior shape does not match {} variances",
            hyper.alpha.len()
        )));
    }
    if l == 0 || post.mean.ncols() != l {
        return Err(Error::validation(format!(
            "posterior has {} slices, expected {l}",
            post.mean.ncols()
        )));
    }
    if let Some(a) = hyper.alpha.iter().find(|a| !(**a > 0.0)) {
        return Err(Error::numerical(format!("cannot update from a zero variance ({a})")));
    }
    let share = |i: usize, alpha: f64| -> f64 {
        match &post.determinedness {
            Some(q) => q[i],
            None => 1.0 - post.covariance[(i, i)] / alpha,
        }
    };
    let lf = l as f64;
    let mut out = Vec::with_capacity(m + 1);
    for k in 0..=m {
        let alpha = hyper.alpha[k];
        let (numerator, den) = if k == 0 {
            let num = linalg::sorted_sum(post.mean.row(0).iter().map(|v| v * v).collect());
            (num, lf * share(0, alpha))
        } else {
            let (r1, r2) = (k, k + m);
            let terms = post
                .mean
                .row(r1)
                .iter()
                .zip(post.mean.row(r2).iter())
                .map(|(c, s)| match variant {
                    UpdateVariant::RowSum => c * c + s * s,
                    UpdateVariant::PairedSum => (c + s) * (c + s),
                })
                .collect();
            let num = linalg::sorted_sum(terms);
            let den = match denominator {
                DenominatorForm::PerRow => share(r1, alpha) + share(r2, alpha),
                DenominatorForm::Single => share(r1, alpha) + share(r2, alpha) - 1.0,
            };
            (num, lf * den)
        };
        if !(den > 0.0) {
            return Err(Error::numerical(format!(
                "variance update for frequency {k} has non-positive denominator {den:e}"
            )));
        }
        let next = numerator / den;
        if !next.is_finite() {
            return Err(Error::numerical(format!("variance update for frequency {k} is not finite")));
        }
        out.push(next.max(0.0));
    }
    Ok(out)
}

/// Frequency indices (`>= 1`) of the `k` largest variances, ascending.
pub(crate) fn largest_frequencies(alpha: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (1..alpha.len()).collect();
    order.sort_by(|&i, &j| alpha[j].total_cmp(&alpha[i]).then(i.cmp(&j)));
    let mut top: Vec<usize> = order.into_iter().take(k).collect();
    top.sort_unstable();
    top
}

/// Noise update `tr((I - A_K A_K^+) S_y) / (N - K)` where `A_K` holds the DC
/// column and the columns of the `k_order` largest variances.
pub fn update_sigma(a: &TransferMatrix, y: &Dataset, alpha: &[f64], k_order: usize) -> Result<f64> {
    if a.nrows() != y.n() {
        return Err(Error::validation("transfer matrix and data disagree on N"));
    }
    if alpha.len() != a.m() + 1 {
        return Err(Error::validation("variance count does not match the grid"));
    }
    update_sigma_raw(a.entries(), a.m(), y.values(), alpha, k_order)
}

fn update_sigma_raw(a: &DMatrix<f64>, m: usize, y: &DMatrix<f64>, alpha: &[f64], k_order: usize) -> Result<f64> {
    let n = a.nrows();
    if k_order > m {
        return Err(Error::validation(format!(
            "model order {k_order} exceeds the {m} available frequencies"
        )));
    }
    if 2 * k_order + 1 >= n {
        return Err(Error::validation(format!(
            "model order {k_order} needs more than {} frames",
            2 * k_order + 1
        )));
    }
    let top = largest_frequencies(alpha, k_order);
    let mut cols = vec![0];
    cols.extend(top.iter().copied());
    cols.extend(top.iter().map(|&i| i + m));
    let am = a.select_columns(&cols);
    let pinv = linalg::pseudo_inverse(&am);
    let residuals: Vec<f64> = y
        .column_iter()
        .map(|col| {
            let coef = &pinv * col;
            (col - &am * coef).norm_squared()
        })
        .collect();
    let total = linalg::sorted_sum(residuals);
    let value = total / (y.ncols() as f64 * (n - k_order) as f64);
    if value < -1e-12 || !value.is_finite() {
        return Err(Error::numerical(format!("noise update produced {value}")));
    }
    Ok(value.max(0.0))
}

/// `-tr(Y^T Σ_y^{-1} Y) - L log det Σ_y` with `Σ_y = σ² I + A Γ A^T`.
pub fn evidence(a: &TransferMatrix, y: &Dataset, hyper: &HyperParams) -> Result<f64> {
    check_shapes(a, y.values(), hyper)?;
    evidence_raw(a.entries(), y.values(), &hyper.gamma_vector(), hyper.sigma2)
}

fn evidence_raw(a: &DMatrix<f64>, y: &DMatrix<f64>, gamma: &[f64], sigma2: f64) -> Result<f64> {
    let n = a.nrows();
    let mut ag = a.clone();
    for (j, mut col) in ag.column_iter_mut().enumerate() {
        col *= gamma[j];
    }
    let sy = DMatrix::identity(n, n) * sigma2 + ag * a.transpose();
    let chol = linalg::cholesky(sy, "data covariance")?;
    let quad: Vec<f64> = y
        .column_iter()
        .map(|col| {
            let col = col.into_owned();
            col.dot(&chol.solve(&col))
        })
        .collect();
    Ok(-linalg::sorted_sum(quad) - y.ncols() as f64 * linalg::log_det(&chol))
}

/// Evidence maximization: posterior, variance update, noise update, repeated
/// until the relative L1 change of the variances drops below `eps_min`.
pub fn fit_sparse_prior(y: &Dataset, a: &TransferMatrix, cfg: &EmConfig) -> Result<PriorFit> {
    cfg.validate()?;
    let n = a.nrows();
    let m = a.m();
    if y.n() != n {
        return Err(Error::validation(format!(
            "transfer matrix has {n} rows but data has {}",
            y.n()
        )));
    }
    if n < 3 {
        return Err(Error::validation("prior fit needs at least 3 frames"));
    }
    let max_order = m.min((n - 2) / 2);
    if let Some(k) = cfg.k_order {
        if k > max_order {
            return Err(Error::validation(format!(
                "k_order {k} exceeds the admissible maximum {max_order}"
            )));
        }
    }
    let l = y.slice_count();
    let mut hyper = HyperParams::new(vec![cfg.alpha_init; m + 1], cfg.sigma2_init)?;
    let mut trace = Vec::new();
    let mut epsilon = f64::INFINITY;
    let sigma_floor = ALPHA_FLOOR * cfg.sigma2_init;

    for iteration in 1..=cfg.max_iter {
        let tag = |e: Error| Error::Fit {
            iteration,
            source: Box::new(e),
        };
        let gamma = hyper.gamma_vector();
        let post = posterior_raw(a.entries(), y.values(), &gamma, hyper.sigma2).map_err(tag)?;
        trace.push(evidence_raw(a.entries(), y.values(), &gamma, hyper.sigma2).map_err(tag)?);

        let mut next = update_alpha(&post, &hyper, l, cfg.update_variant, cfg.denominator).map_err(tag)?;
        let peak = next.iter().copied().fold(0.0, f64::max);
        let floor = if peak > 0.0 {
            ALPHA_FLOOR * peak
        } else {
            ALPHA_FLOOR * cfg.alpha_init
        };
        for v in next.iter_mut() {
            if *v < floor {
                *v = floor;
            }
        }

        let order = match cfg.k_order {
            Some(k) => k,
            None => {
                let top = next[1..].iter().copied().fold(0.0, f64::max);
                let count = next[1..]
                    .iter()
                    .filter(|&&v| v >= DEFAULT_PRUNE_RATIO * top)
                    .count();
                count.clamp(1.min(max_order), max_order)
            }
        };
        let sigma2 = update_sigma_raw(a.entries(), m, y.values(), &next, order)
            .map_err(tag)?
            .max(sigma_floor);

        let change: f64 = next.iter().zip(&hyper.alpha).map(|(x, y)| (x - y).abs()).sum();
        let scale: f64 = hyper.alpha.iter().map(|v| v.abs()).sum();
        epsilon = change / scale;
        hyper = HyperParams { alpha: next, sigma2 };
        if epsilon < cfg.eps_min {
            return Ok(PriorFit {
                hyper,
                iterations_used: iteration,
                final_epsilon: epsilon,
                converged: true,
                evidence_trace: trace,
            });
        }
    }
    Ok(PriorFit {
        hyper,
        iterations_used: cfg.max_iter,
        final_epsilon: epsilon,
        converged: false,
        evidence_trace: trace,
    })
}

/// Drops frequencies whose variance is below `threshold_ratio` times the
/// largest non-DC variance. DC is always kept.
pub fn prune(fit: &PriorFit, a: &TransferMatrix, threshold_ratio: f64) -> Result<PrunedModel> {
    prune_hyper(&fit.hyper, a, threshold_ratio)
}

pub fn prune_hyper(hyper: &HyperParams, a: &TransferMatrix, threshold_ratio: f64) -> Result<PrunedModel> {
    if hyper.m() != a.m() {
        return Err(Error::validation("variance count does not match the grid"));
    }
    if !(threshold_ratio.is_finite() && threshold_ratio >= 0.0) {
        return Err(Error::validation(format!(
            "threshold ratio must be >= 0, got {threshold_ratio}"
        )));
    }
    let peak = hyper.alpha[1..].iter().copied().fold(0.0, f64::max);
    let kept: Vec<usize> = if peak > 0.0 {
        let threshold = threshold_ratio * peak;
        (1..hyper.alpha.len())
            .filter(|&k| hyper.alpha[k] > 0.0 && hyper.alpha[k] >= threshold)
            .collect()
    } else {
        Vec::new()
    };
    let transfer = a.select_frequencies(&kept)?;
    let mut alpha = vec![hyper.alpha[0]];
    alpha.extend(kept.iter().map(|&k| hyper.alpha[k]));
    let mut kept_frequency_indices = vec![0];
    kept_frequency_indices.extend(kept);
    Ok(PrunedModel {
        kept_frequency_indices,
        transfer,
        hyper: HyperParams::new(alpha, hyper.sigma2)?,
        threshold_ratio,
    })
}
