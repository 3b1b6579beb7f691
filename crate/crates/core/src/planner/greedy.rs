use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{spread_of_amplitude_covariance, GainState, PlannerModel, SpreadMeasure};
use crate::error::{Error, Result};
use crate::model::LabelSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Pick the frame that leaves the smallest spread.
    #[default]
    Minimize,
    /// Pick the frame that leaves the largest spread (worst-case diagnostic).
    Maximize,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimize" => Ok(Self::Minimize),
            "maximize" => Ok(Self::Maximize),
            other => Err(Error::validation(format!("unknown direction {other:?}"))),
        }
    }
}

/// Ordered labeling plan. `spreads[k]` is the spread after labeling
/// `indices[..=k]`; `gains[k]` is the spread reduction of that step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPlan {
    pub indices: Vec<usize>,
    pub prior_spread: f64,
    pub spreads: Vec<f64>,
    pub gains: Vec<f64>,
    pub measure: SpreadMeasure,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyStep {
    pub index: usize,
    pub spread_after: f64,
    pub gain: f64,
}

/// Values within this relative distance of the best one count as ties.
pub const TIE_RTOL: f64 = 1e-12;

/// Index of the best value; ties (within `TIE_RTOL`) go to the smallest index.
fn pick(values: &[(usize, f64)], direction: Direction) -> Option<(usize, f64)> {
    let best = values.iter().map(|v| v.1).reduce(|a, b| match direction {
        Direction::Minimize => a.min(b),
        Direction::Maximize => a.max(b),
    })?;
    let tol = TIE_RTOL * best.abs();
    values.iter().copied().find(|&(_, v)| match direction {
        Direction::Minimize => v <= best + tol,
        Direction::Maximize => v >= best - tol,
    })
}

fn candidates(model: &PlannerModel, labels: &LabelSet) -> Vec<usize> {
    labels.complement(model.n())
}

fn step_by_trace(state: &GainState<'_>, direction: Direction) -> Option<GreedyStep> {
    let cands = candidates(state.model(), state.labels());
    // spread after = spread before - gain, so minimizing spread maximizes gain
    let gains: Vec<(usize, f64)> = cands.iter().map(|&i| (i, -state.gain(i))).collect();
    let (index, neg_gain) = pick(&gains, direction)?;
    let gain = -neg_gain;
    Some(GreedyStep {
        index,
        spread_after: state.trace_spread() - gain,
        gain,
    })
}

fn step_by_eigen(
    model: &PlannerModel,
    labels: &LabelSet,
    current: f64,
    measure: SpreadMeasure,
    direction: Direction,
) -> Result<Option<GreedyStep>> {
    let cands = candidates(model, labels);
    let values: Vec<(usize, f64)> = cands
        .par_iter()
        .map(|&i| {
            let mut next = labels.clone();
            next.push_unchecked(i);
            let cov = model.restricted_covariance(&next)?;
            Ok((i, spread_of_amplitude_covariance(model, &cov, measure)?))
        })
        .collect::<Result<_>>()?;
    Ok(pick(&values, direction).map(|(index, spread_after)| GreedyStep {
        index,
        spread_after,
        gain: current - spread_after,
    }))
}

/// One greedy step from an arbitrary label set. `None` when every frame is
/// labeled.
pub fn greedy_step(
    model: &PlannerModel,
    labels: &LabelSet,
    measure: SpreadMeasure,
    direction: Direction,
) -> Result<Option<GreedyStep>> {
    match measure {
        SpreadMeasure::Trace => {
            let state = GainState::with_labels(model, labels.clone())?;
            Ok(step_by_trace(&state, direction))
        }
        _ => {
            let cov = model.restricted_covariance(labels)?;
            let current = spread_of_amplitude_covariance(model, &cov, measure)?;
            step_by_eigen(model, labels, current, measure, direction)
        }
    }
}

/// Greedy labeling order of length `k`. Depends only on the model, never on
/// labeled values.
pub fn greedy_plan(
    model: &PlannerModel,
    k: usize,
    measure: SpreadMeasure,
    direction: Direction,
) -> Result<LabelPlan> {
    let n = model.n();
    if k == 0 || k > n {
        return Err(Error::validation(format!("plan length must be in 1..={n}, got {k}")));
    }
    let mut plan = LabelPlan {
        indices: Vec::with_capacity(k),
        prior_spread: 0.0,
        spreads: Vec::with_capacity(k),
        gains: Vec::with_capacity(k),
        measure,
        direction,
    };
    match measure {
        SpreadMeasure::Trace => {
            let mut state = GainState::new(model);
            plan.prior_spread = state.trace_spread();
            for _ in 0..k {
                let step = step_by_trace(&state, direction).expect("unlabeled frames remain");
                state.add(step.index)?;
                plan.indices.push(step.index);
                plan.spreads.push(state.trace_spread());
                plan.gains.push(step.gain);
            }
        }
        _ => {
            let mut labels = LabelSet::empty();
            let cov = model.restricted_covariance(&labels)?;
            let mut current = spread_of_amplitude_covariance(model, &cov, measure)?;
            plan.prior_spread = current;
            for _ in 0..k {
                let step = step_by_eigen(model, &labels, current, measure, direction)?
                    .expect("unlabeled frames remain");
                labels.push_unchecked(step.index);
                current = step.spread_after;
                plan.indices.push(step.index);
                plan.spreads.push(step.spread_after);
                plan.gains.push(step.gain);
            }
        }
    }
    Ok(plan)
}
