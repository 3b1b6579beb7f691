//! Synthetic series, likelihood scoring, random baselines and leave-one-slice-out
//! evaluation of labeling plans.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Dataset, LabelSet, TimeGrid, TransferMatrix};
use crate::planner::{
    greedy_plan, predictive_variance, restricted_posterior, spread_of_amplitude_covariance, Direction,
    LabelPlan, PlannerModel, PredictiveDistribution, SpreadMeasure,
};
use crate::sbl::{fit_sparse_prior, prune, EmConfig, DEFAULT_PRUNE_RATIO};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticComponent {
    pub frequency: f64,
    pub amplitude: f64,
    /// One phase (radians) per slice.
    pub phases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub components: Vec<SyntheticComponent>,
    /// One offset per slice.
    pub dc_offsets: Vec<f64>,
    pub noise_sigma: f64,
    pub n: usize,
    pub frame_rate: f64,
    pub slice_count: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.slice_count == 0 {
            return Err(Error::validation("synthetic data needs at least one slice"));
        }
        if self.dc_offsets.len() != self.slice_count {
            return Err(Error::validation(format!(
                "{} dc offsets for {} slices",
                self.dc_offsets.len(),
                self.slice_count
            )));
        }
        for (c, comp) in self.components.iter().enumerate() {
            if comp.phases.len() != self.slice_count {
                return Err(Error::validation(format!(
                    "component {c} has {} phases for {} slices",
                    comp.phases.len(),
                    self.slice_count
                )));
            }
            if !(comp.frequency.is_finite() && comp.frequency >= 0.0 && comp.amplitude.is_finite()) {
                return Err(Error::validation(format!("component {c} is not finite")));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::validation(format!(
                "noise sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    /// Five slices of a 0.3 Hz component (amplitude 0.5) and a 1.2 Hz
    /// component (amplitude 1.0) on a constant offset of 2, sampled at 30 fps
    /// for 300 frames with noise of 5% of the larger amplitude. Phases are
    /// drawn uniformly per slice from `seed`.
    pub fn two_tone(seed: u64) -> Self {
        let slice_count = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut phases = || (0..slice_count).map(|_| rng.random_range(0.0..2.0 * PI)).collect::<Vec<_>>();
        let respiratory = phases();
        let heart = phases();
        Self {
            components: vec![
                SyntheticComponent {
                    frequency: 0.3,
                    amplitude: 0.5,
                    phases: respiratory,
                },
                SyntheticComponent {
                    frequency: 1.2,
                    amplitude: 1.0,
                    phases: heart,
                },
            ],
            dc_offsets: vec![2.0; slice_count],
            noise_sigma: 0.05,
            n: 300,
            frame_rate: 30.0,
            slice_count,
            seed,
        }
    }
}

/// `y_{k,l} = dc_l + Σ_c a_c cos(2π f_c t_k + φ_{c,l}) + ε` with Gaussian
/// noise from the spec's seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let tg = TimeGrid::new(spec.n, spec.frame_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::validation(e.to_string()))?;
    let times = tg.times();
    let values = DMatrix::from_fn(spec.n, spec.slice_count, |k, l| {
        let t = times[k];
        spec.dc_offsets[l]
            + spec
                .components
                .iter()
                .map(|c| c.amplitude * (2.0 * PI * c.frequency * t + c.phases[l]).cos())
                .sum::<f64>()
    });
    // Noise is drawn slice by slice so the stream does not depend on N × L layout.
    let mut values = values;
    if spec.noise_sigma > 0.0 {
        for l in 0..spec.slice_count {
            for k in 0..spec.n {
                values[(k, l)] += noise.sample(&mut rng);
            }
        }
    }
    let ids = (1..=spec.slice_count).map(|l| format!("s{l}")).collect();
    Dataset::new(values, tg, ids)
}

/// Which time points enter the likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NllScope {
    #[default]
    AllPoints,
    Unlabeled,
}

/// Gaussian negative log-likelihood
/// `½ [(y-μ)^T Σ^{-1} (y-μ) + log det Σ + n log 2π]` over the marginal of
/// `restrict_to` (all points when `None`).
pub fn nll(pred: &PredictiveDistribution, y_true: &[f64], restrict_to: Option<&[usize]>) -> Result<f64> {
    let n = pred.mean.len();
    if y_true.len() != n || pred.covariance.nrows() != n || pred.covariance.ncols() != n {
        return Err(Error::validation(format!(
            "predictive of size {n} scored against {} values",
            y_true.len()
        )));
    }
    let idx: Vec<usize> = match restrict_to {
        Some(r) => {
            if let Some(bad) = r.iter().find(|&&i| i >= n) {
                return Err(Error::validation(format!("index {bad} out of range")));
            }
            r.to_vec()
        }
        None => (0..n).collect(),
    };
    if idx.is_empty() {
        return Ok(0.0);
    }
    let cov = pred.covariance.select_rows(&idx).select_columns(&idx);
    let r = DVector::from_iterator(idx.len(), idx.iter().map(|&i| y_true[i] - pred.mean[i]));
    let chol = linalg::cholesky(cov, "predictive covariance")?;
    let quad = r.dot(&chol.solve(&r));
    Ok(0.5 * (quad + linalg::log_det(&chol) + idx.len() as f64 * (2.0 * PI).ln()))
}

/// Same value as [`nll`] for the predictive of `(cov_x, mean_x)`, through the
/// `D × D` core: with `Σ_x = L L^T` and `C = A_I L`,
/// `Σ = σ² I + C C^T`, so the determinant lemma and Woodbury identity apply.
pub fn nll_low_rank(
    model: &PlannerModel,
    mean_x: &DVector<f64>,
    cov_x: &DMatrix<f64>,
    y_true: &[f64],
    restrict_to: Option<&[usize]>,
) -> Result<f64> {
    let n = model.n();
    if y_true.len() != n {
        return Err(Error::validation(format!("{} values for a series of {n}", y_true.len())));
    }
    let idx: Vec<usize> = match restrict_to {
        Some(r) => r.to_vec(),
        None => (0..n).collect(),
    };
    if idx.is_empty() {
        return Ok(0.0);
    }
    let s2 = model.sigma2();
    let a = model.a().select_rows(&idx);
    let chol = linalg::cholesky(cov_x.clone(), "amplitude covariance")?;
    let c = &a * chol.l();
    let mean = &a * mean_x;
    let r = DVector::from_iterator(idx.len(), idx.iter().zip(mean.iter()).map(|(&i, m)| y_true[i] - m));
    let d = c.ncols();
    let mut core = c.transpose() * &c / s2;
    for j in 0..d {
        core[(j, j)] += 1.0;
    }
    let core = linalg::cholesky(core, "likelihood core")?;
    let ctr = c.transpose() * &r / s2;
    let quad = (r.norm_squared() / s2) - ctr.dot(&core.solve(&ctr));
    let log_det = idx.len() as f64 * s2.ln() + linalg::log_det(&core);
    Ok(0.5 * (quad + log_det + idx.len() as f64 * (2.0 * PI).ln()))
}

fn scope_indices(scope: NllScope, labels: &LabelSet, n: usize) -> Option<Vec<usize>> {
    match scope {
        NllScope::AllPoints => None,
        NllScope::Unlabeled => Some(labels.complement(n)),
    }
}

/// NLL of `y_true` under the predictive after labeling `labels` with the
/// true values at those frames.
pub fn nll_after_labeling(model: &PlannerModel, labels: &LabelSet, y_true: &[f64], scope: NllScope) -> Result<f64> {
    let values: Vec<f64> = labels.indices().iter().map(|&i| y_true[i]).collect();
    let rp = restricted_posterior(model, labels, Some(&values))?;
    let restrict = scope_indices(scope, labels, model.n());
    nll_low_rank(model, &rp.mean, &rp.covariance, y_true, restrict.as_deref())
}

/// Nearest-rank summary of a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub q01: f64,
    pub q05: f64,
    pub median: f64,
    pub q95: f64,
    pub max: f64,
}

/// Nearest-rank quantile: the `ceil(p n)`-th smallest value (1-based).
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("cannot summarize an empty sample"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            mean: linalg::sorted_sum(values.to_vec()) / values.len() as f64,
            min: sorted[0],
            q01: nearest_rank(&sorted, 0.01),
            q05: nearest_rank(&sorted, 0.05),
            median: nearest_rank(&sorted, 0.5),
            q95: nearest_rank(&sorted, 0.95),
            max: sorted[sorted.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    pub k: usize,
    pub seed: u64,
    pub subsets: Vec<Vec<usize>>,
    pub spreads: Vec<f64>,
    pub spread_summary: Summary,
    pub nlls: Option<Vec<f64>>,
    pub nll_summary: Option<Summary>,
    /// Mean predictive band width (2 std) per draw.
    pub band_widths: Vec<f64>,
}

/// Mean over the series of the predictive `±1 std` band width.
pub fn mean_band_width(model: &PlannerModel, cov_x: &DMatrix<f64>) -> f64 {
    let var = predictive_variance(model, cov_x);
    let widths: Vec<f64> = var.iter().map(|v| 2.0 * v.sqrt()).collect();
    linalg::sorted_sum(widths) / model.n() as f64
}

/// Spreads (and NLLs when `y_true` is given) of `draws` uniformly random
/// size-`k` label sets.
pub fn random_baseline(
    model: &PlannerModel,
    k: usize,
    draws: usize,
    seed: u64,
    measure: SpreadMeasure,
    y_true: Option<&[f64]>,
    scope: NllScope,
) -> Result<RandomBaseline> {
    let n = model.n();
    if k == 0 || k > n {
        return Err(Error::validation(format!("subset size must be in 1..={n}, got {k}")));
    }
    if draws == 0 {
        return Err(Error::validation("random baseline needs at least one draw"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subsets: Vec<Vec<usize>> = (0..draws)
        .map(|_| {
            let mut s = rand::seq::index::sample(&mut rng, n, k).into_vec();
            s.sort_unstable();
            s
        })
        .collect();
    let scored: Vec<(f64, Option<f64>, f64)> = subsets
        .par_iter()
        .map(|s| {
            let labels = LabelSet::new(s.clone(), n)?;
            let values: Option<Vec<f64>> = y_true.map(|y| s.iter().map(|&i| y[i]).collect());
            let rp = restricted_posterior(model, &labels, values.as_deref())?;
            let spread = spread_of_amplitude_covariance(model, &rp.covariance, measure)?;
            let nll = match y_true {
                Some(y) => {
                    let restrict = scope_indices(scope, &labels, n);
                    Some(nll_low_rank(model, &rp.mean, &rp.covariance, y, restrict.as_deref())?)
                }
                None => None,
            };
            Ok((spread, nll, mean_band_width(model, &rp.covariance)))
        })
        .collect::<Result<_>>()?;
    let spreads: Vec<f64> = scored.iter().map(|s| s.0).collect();
    let nlls: Option<Vec<f64>> = y_true.map(|_| scored.iter().map(|s| s.1.unwrap_or(f64::NAN)).collect());
    let nll_summary = nlls.as_deref().map(Summary::of).transpose()?;
    Ok(RandomBaseline {
        k,
        seed,
        spread_summary: Summary::of(&spreads)?,
        subsets,
        spreads,
        nll_summary,
        nlls,
        band_widths: scored.iter().map(|s| s.2).collect(),
    })
}

/// Settings for planning and scoring inside one jackknife fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    pub measure: SpreadMeasure,
    pub k_max: usize,
    pub draws: usize,
    pub seed: u64,
    pub prune_ratio: f64,
    pub nll_scope: NllScope,
    /// Also plan the spread-maximizing order.
    pub include_worst: bool,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            measure: SpreadMeasure::Trace,
            k_max: 15,
            draws: 1000,
            seed: 0,
            prune_ratio: DEFAULT_PRUNE_RATIO,
            nll_scope: NllScope::AllPoints,
            include_worst: true,
        }
    }
}

/// Seed for one (fold, k) baseline, mixed so neighbouring pairs get
/// unrelated streams.
pub fn derive_seed(seed: u64, fold: usize, k: usize) -> u64 {
    let mut z = seed
        ^ (fold as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (k as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanScore {
    pub index: usize,
    pub spread: f64,
    pub nll: f64,
    pub band_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSummary {
    pub seed: u64,
    pub draws: usize,
    pub spread: Summary,
    pub nll: Summary,
    pub band_width: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KRow {
    pub k: usize,
    pub greedy: PlanScore,
    pub worst: Option<PlanScore>,
    pub random: RandomSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub slice_id: String,
    pub fold: usize,
    pub measure: SpreadMeasure,
    pub nll_scope: NllScope,
    pub seed: u64,
    pub kept_frequency_indices: Vec<usize>,
    pub kept_frequencies: Vec<f64>,
    pub alpha: Vec<f64>,
    pub sigma2: f64,
    pub fit_iterations: usize,
    pub fit_converged: bool,
    pub greedy_plan: Vec<usize>,
    pub worst_plan: Option<Vec<usize>>,
    pub rows: Vec<KRow>,
}

fn score_plan(model: &PlannerModel, plan: &LabelPlan, k: usize, y: &[f64], scope: NllScope) -> Result<PlanScore> {
    let labels = LabelSet::new(plan.indices[..k].to_vec(), model.n())?;
    let values: Vec<f64> = labels.indices().iter().map(|&i| y[i]).collect();
    let rp = restricted_posterior(model, &labels, Some(&values))?;
    let restrict = scope_indices(scope, &labels, model.n());
    Ok(PlanScore {
        index: plan.indices[k - 1],
        spread: plan.spreads[k - 1],
        nll: nll_low_rank(model, &rp.mean, &rp.covariance, y, restrict.as_deref())?,
        band_width: mean_band_width(model, &rp.covariance),
    })
}

/// Evaluates the plans of one pruned model against a held-out series.
pub fn evaluate_fold(
    model: &PlannerModel,
    y_true: &[f64],
    plan_cfg: &PlanConfig,
    fold: usize,
) -> Result<(LabelPlan, Option<LabelPlan>, Vec<KRow>)> {
    let k_max = plan_cfg.k_max.min(model.n());
    if k_max == 0 {
        return Err(Error::validation("k_max must be at least 1"));
    }
    let greedy = greedy_plan(model, k_max, plan_cfg.measure, Direction::Minimize)?;
    let worst = if plan_cfg.include_worst {
        Some(greedy_plan(model, k_max, plan_cfg.measure, Direction::Maximize)?)
    } else {
        None
    };
    let mut rows = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let seed = derive_seed(plan_cfg.seed, fold, k);
        let base = random_baseline(
            model,
            k,
            plan_cfg.draws,
            seed,
            plan_cfg.measure,
            Some(y_true),
            plan_cfg.nll_scope,
        )?;
        rows.push(KRow {
            k,
            greedy: score_plan(model, &greedy, k, y_true, plan_cfg.nll_scope)?,
            worst: worst
                .as_ref()
                .map(|w| score_plan(model, w, k, y_true, plan_cfg.nll_scope))
                .transpose()?,
            random: RandomSummary {
                seed,
                draws: plan_cfg.draws,
                spread: base.spread_summary,
                nll: base.nll_summary.expect("scored against values"),
                band_width: Summary::of(&base.band_widths)?,
            },
        });
    }
    Ok((greedy, worst, rows))
}

/// Leave-one-slice-out evaluation: for each slice, fit and prune the prior
/// on the other slices, plan on the pruned model and score against the
/// held-out slice.
pub fn jackknife(y: &Dataset, a: &TransferMatrix, cfg: &EmConfig, plan_cfg: &PlanConfig) -> Result<Vec<EvalReport>> {
    if y.slice_count() < 2 {
        return Err(Error::validation("jackknife needs at least 2 slices"));
    }
    (0..y.slice_count())
        .into_par_iter()
        .map(|fold| {
            let slice_id = y.slice_ids()[fold].clone();
            run_fold(y, a, cfg, plan_cfg, fold).map_err(|e| Error::Fold {
                slice_id,
                source: Box::new(e),
            })
        })
        .collect()
}

fn run_fold(y: &Dataset, a: &TransferMatrix, cfg: &EmConfig, plan_cfg: &PlanConfig, fold: usize) -> Result<EvalReport> {
    let train = y.without_slice(fold)?;
    let fit = fit_sparse_prior(&train, a, cfg)?;
    let pruned = prune(&fit, a, plan_cfg.prune_ratio)?;
    let model = PlannerModel::from_pruned(&pruned)?;
    let held_out = y.slice(fold);
    let (greedy, worst, rows) = evaluate_fold(&model, &held_out, plan_cfg, fold)?;
    Ok(EvalReport {
        slice_id: y.slice_ids()[fold].clone(),
        fold,
        measure: plan_cfg.measure,
        nll_scope: plan_cfg.nll_scope,
        seed: plan_cfg.seed,
        kept_frequencies: pruned.kept_frequencies().to_vec(),
        kept_frequency_indices: pruned.kept_frequency_indices,
        alpha: pruned.hyper.alpha,
        sigma2: pruned.hyper.sigma2,
        fit_iterations: fit.iterations_used,
        fit_converged: fit.converged,
        greedy_plan: greedy.indices,
        worst_plan: worst.map(|w| w.indices),
        rows,
    })
}
