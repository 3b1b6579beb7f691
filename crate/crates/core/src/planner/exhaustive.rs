use super::{spread_of_amplitude_covariance, PlannerModel, SpreadMeasure, TIE_RTOL};
use crate::error::{Error, Result};
use crate::model::LabelSet;

/// Largest number of subsets `exhaustive_plan` enumerates by default.
pub const DEFAULT_SUBSET_BUDGET: u128 = 2_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveResult {
    pub labels: LabelSet,
    /// Minimal spread over all subsets of the requested size.
    pub spread: f64,
    pub subsets_evaluated: u128,
}

pub(crate) fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// Advances `c` to the next k-combination of `0..n` in lexicographic order.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] != i + n - k {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Global minimum of the spread over all size-`k` label sets. The
/// lexicographically first optimum wins ties (within `TIE_RTOL`).
pub fn exhaustive_plan(
    model: &PlannerModel,
    k: usize,
    measure: SpreadMeasure,
    budget: Option<u128>,
) -> Result<ExhaustiveResult> {
    let n = model.n();
    if k == 0 || k > n {
        return Err(Error::validation(format!("subset size must be in 1..={n}, got {k}")));
    }
    let budget = budget.unwrap_or(DEFAULT_SUBSET_BUDGET);
    let count = binomial(n, k);
    if count > budget {
        return Err(Error::Refused(format!(
            "{count} subsets of size {k} from {n} frames exceed the budget of {budget}"
        )));
    }
    let mut comb: Vec<usize> = (0..k).collect();
    let mut values = Vec::new();
    loop {
        let labels = LabelSet::new(comb.clone(), n)?;
        let cov = model.restricted_covariance(&labels)?;
        values.push(spread_of_amplitude_covariance(model, &cov, measure)?);
        if !next_combination(&mut comb, n) {
            break;
        }
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let rank = values
        .iter()
        .position(|&v| v <= min + TIE_RTOL * min.abs())
        .expect("at least one subset");
    let mut indices: Vec<usize> = (0..k).collect();
    for _ in 0..rank {
        next_combination(&mut indices, n);
    }
    Ok(ExhaustiveResult {
        labels: LabelSet::new(indices, n)?,
        spread: values[rank],
        subsets_evaluated: count,
    })
}
