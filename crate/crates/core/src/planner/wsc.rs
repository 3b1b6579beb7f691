//! Weak-submodularity diagnostics for the trace objective
//! `f(J) = tr(Σ_y) - tr(Σ_post^{(J)})`.
//!
//! The constant `c_f = max f_i(Y) / f_i(X)` over `X ⊆ Y ⊂ Ω`, `i ∉ Y`
//! controls the greedy guarantee `f(greedy) >= (1 - e^{-1/c_f}) f(J*)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{exhaustive_plan, greedy_plan, Direction, PlannerModel, SpreadMeasure};
use crate::error::{Error, Result};
use crate::model::LabelSet;

/// Largest series length accepted by `exact_wsc`.
pub const EXACT_WSC_MAX_N: usize = 14;

/// Zero gains are replaced by this value in ratios.
const GAIN_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WscEstimate {
    pub samples: Vec<f64>,
    pub max_ratio: f64,
    pub fraction_above_one: f64,
    pub sample_count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactWsc {
    pub constant: f64,
    /// Number of `(X, Y, i)` triples covered, `N · 3^(N-1)`.
    pub triples: u64,
    pub argmax_x: Vec<usize>,
    pub argmax_y: Vec<usize>,
    pub argmax_i: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub k: usize,
    pub greedy_labels: Vec<usize>,
    pub optimal_labels: Vec<usize>,
    pub greedy_value: f64,
    pub optimal_value: f64,
    pub c_f: f64,
    pub factor: f64,
    pub bound_satisfied: bool,
}

/// `f_i(S)` computed from a fresh covariance of `S` (indices ascending).
pub fn trace_gain(model: &PlannerModel, set: &[usize], i: usize) -> Result<f64> {
    let labels = LabelSet::new(set.to_vec(), model.n())?;
    let cov = model.restricted_covariance(&labels)?;
    Ok(gain_from_covariance(model, &cov, i))
}

fn gain_from_covariance(model: &PlannerModel, cov: &nalgebra::DMatrix<f64>, i: usize) -> f64 {
    let s2 = model.sigma2();
    let row = model.a().row(i).transpose();
    let v = cov * &row;
    let num = v.dot(&(model.ata() * &v)) / s2;
    num / (1.0 + row.dot(&v) / s2)
}

fn ratio(num: f64, den: f64) -> f64 {
    num.max(GAIN_FLOOR) / den.max(GAIN_FLOOR)
}

/// Samples `c_(X,Y,i) = f_i(Y) / f_i(X)`: `i` uniform over `Ω`, `Y` keeps
/// each element of `Ω \ {i}` with probability 1/2, `X` keeps each element of
/// `Y` with probability 1/2.
pub fn estimate_wsc(model: &PlannerModel, sample_count: usize, seed: u64) -> Result<WscEstimate> {
    let n = model.n();
    if n < 2 {
        return Err(Error::validation("weak-submodularity sampling needs at least 2 frames"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(usize, Vec<usize>, Vec<usize>)> = (0..sample_count)
        .map(|_| {
            let i = rng.random_range(0..n);
            let y: Vec<usize> = (0..n).filter(|&j| j != i && rng.random_bool(0.5)).collect();
            let x: Vec<usize> = y.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
            (i, x, y)
        })
        .collect();
    let samples: Vec<f64> = draws
        .par_iter()
        .map(|(i, x, y)| Ok(ratio(trace_gain(model, y, *i)?, trace_gain(model, x, *i)?)))
        .collect::<Result<_>>()?;
    let max_ratio = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let above = samples.iter().filter(|&&r| r > 1.0).count();
    Ok(WscEstimate {
        fraction_above_one: if sample_count == 0 { 0.0 } else { above as f64 / sample_count as f64 },
        max_ratio,
        sample_count,
        seed,
        samples,
    })
}

fn mask_to_indices(mask: usize, n: usize) -> Vec<usize> {
    (0..n).filter(|&j| mask & (1 << j) != 0).collect()
}

/// Exact `c_f` by enumeration. For every `i` and `Y ⊆ Ω \ {i}` the smallest
/// `f_i(X)` over `X ⊆ Y` comes from a subset-minimum recursion, so the
/// `N · 3^(N-1)` triples are covered in `O(N² 2^N)` work.
pub fn exact_wsc(model: &PlannerModel) -> Result<ExactWsc> {
    let n = model.n();
    if n > EXACT_WSC_MAX_N {
        return Err(Error::Refused(format!(
            "exact weak-submodularity constant needs N <= {EXACT_WSC_MAX_N}, got {n}"
        )));
    }
    if n < 2 {
        return Err(Error::validation("exact weak-submodularity constant needs at least 2 frames"));
    }
    let full = 1usize << n;
    // gains[mask * n + i] = f_i(mask) for i not in mask
    let per_mask: Vec<Vec<f64>> = (0..full)
        .into_par_iter()
        .map(|mask| {
            let labels = LabelSet::new(mask_to_indices(mask, n), n)?;
            let cov = model.restricted_covariance(&labels)?;
            Ok((0..n)
                .map(|i| {
                    if mask & (1 << i) != 0 {
                        f64::NAN
                    } else {
                        gain_from_covariance(model, &cov, i)
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut best = (f64::NEG_INFINITY, 0usize, 0usize, 0usize);
    for i in 0..n {
        let bit = 1usize << i;
        // (min gain over subsets, the subset reaching it)
        let mut low = vec![(f64::INFINITY, 0usize); full];
        for y in 0..full {
            if y & bit != 0 {
                continue;
            }
            let mut cur = (per_mask[y][i], y);
            let mut rest = y;
            while rest != 0 {
                let j = rest & rest.wrapping_neg();
                rest &= rest - 1;
                let cand = low[y & !j];
                if cand.0 < cur.0 || (cand.0 == cur.0 && cand.1 < cur.1) {
                    cur = cand;
                }
            }
            low[y] = cur;
            let r = ratio(per_mask[y][i], cur.0);
            if r > best.0 {
                best = (r, cur.1, y, i);
            }
        }
    }
    Ok(ExactWsc {
        constant: best.0,
        triples: n as u64 * 3u64.pow(n as u32 - 1),
        argmax_x: mask_to_indices(best.1, n),
        argmax_y: mask_to_indices(best.2, n),
        argmax_i: best.3,
    })
}

/// Compares the greedy trace plan against the enumerated optimum and the
/// guarantee `(1 - e^{-1/c_f}) f(J*)` on the final set.
pub fn bound_check(model: &PlannerModel, k: usize) -> Result<BoundReport> {
    let exact = exact_wsc(model)?;
    let optimum = exhaustive_plan(model, k, SpreadMeasure::Trace, None)?;
    let greedy = greedy_plan(model, k, SpreadMeasure::Trace, Direction::Minimize)?;
    let prior = model.prior_trace();
    let greedy_cov = model.restricted_covariance(&LabelSet::new(greedy.indices.clone(), model.n())?)?;
    let greedy_value = prior - model.trace_of(&greedy_cov);
    let optimal_value = prior - optimum.spread;
    let factor = 1.0 - (-1.0 / exact.constant).exp();
    let slack = 1e-12 * optimal_value.abs();
    Ok(BoundReport {
        k,
        greedy_labels: greedy.indices,
        optimal_labels: optimum.labels.indices().to_vec(),
        greedy_value,
        optimal_value,
        c_f: exact.constant,
        factor,
        bound_satisfied: greedy_value + slack >= factor * optimal_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimeGrid;

    fn brute_force_wsc(model: &PlannerModel) -> f64 {
        let n = model.n();
        let mut best = f64::NEG_INFINITY;
        for i in 0..n {
            for y in 0..(1usize << n) {
                if y & (1 << i) != 0 {
                    continue;
                }
                let fy = trace_gain(model, &mask_to_indices(y, n), i).unwrap();
                // every submask x of y
                let mut x = y;
                loop {
                    let fx = trace_gain(model, &mask_to_indices(x, n), i).unwrap();
                    best = best.max(ratio(fy, fx));
                    if x == 0 {
                        break;
                    }
                    x = (x - 1) & y;
                }
            }
        }
        best
    }

    fn two_tone(n: usize) -> PlannerModel {
        let tg = TimeGrid::new(n, 2.0).unwrap();
        PlannerModel::from_frequencies(&tg, vec![0.0, 0.15, 0.55], vec![0.5, 2.0, 1.0], 0.05).unwrap()
    }

    #[test]
    fn exact_matches_brute_force() {
        for n in [2usize, 4, 6] {
            let m = two_tone(n);
            let exact = exact_wsc(&m).unwrap();
            let brute = brute_force_wsc(&m);
            assert_eq!(exact.constant.to_bits(), brute.to_bits(), "n = {n}");
            let fy = trace_gain(&m, &exact.argmax_y, exact.argmax_i).unwrap();
            let fx = trace_gain(&m, &exact.argmax_x, exact.argmax_i).unwrap();
            assert_eq!(ratio(fy, fx), exact.constant);
        }
        assert_eq!(exact_wsc(&two_tone(2)).unwrap().triples, 6);
    }

    #[test]
    fn dc_only_is_submodular() {
        let tg = TimeGrid::new(4, 1.0).unwrap();
        let m = PlannerModel::from_frequencies(&tg, vec![0.0], vec![1.3], 0.4).unwrap();
        assert!(exact_wsc(&m).unwrap().constant <= 1.0 + 1e-10);
        let est = estimate_wsc(&m, 2000, 3).unwrap();
        assert!(est.samples.iter().all(|&r| r <= 1.0 + 1e-10));
    }

    #[test]
    fn estimate_is_deterministic_and_bounded() {
        let m = two_tone(8);
        let a = estimate_wsc(&m, 500, 42).unwrap();
        let b = estimate_wsc(&m, 500, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.samples.iter().all(|r| r.is_finite() && *r > 0.0));
        assert!(a.max_ratio <= exact_wsc(&m).unwrap().constant + 1e-10);
    }

    #[test]
    fn identical_sets_give_unit_ratio() {
        let m = two_tone(6);
        let g = trace_gain(&m, &[1, 4], 2).unwrap();
        assert_eq!(ratio(g, g), 1.0);
    }

    #[test]
    fn refuses_large_n() {
        assert!(matches!(exact_wsc(&two_tone(15)), Err(Error::Refused(_))));
    }

    #[test]
    fn bound_holds_on_small_models() {
        let m = two_tone(8);
        let r1 = bound_check(&m, 1).unwrap();
        assert!((r1.greedy_value - r1.optimal_value).abs() <= 1e-12 * r1.optimal_value);
        assert!(r1.bound_satisfied);
        let r3 = bound_check(&m, 3).unwrap();
        assert!(r3.bound_satisfied);
        assert!(r3.greedy_value <= r3.optimal_value * (1.0 + 1e-12));
    }
}
