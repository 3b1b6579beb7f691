use nalgebra::{DMatrix, DVector};

use super::PlannerModel;
use crate::error::{Error, Result};
use crate::model::LabelSet;

/// Rank-one updates between full recomputations of the covariance.
pub const REFRESH_INTERVAL: usize = 32;

/// Incremental planner state: the label set `J` and `D^{-1} = Σ_x^{(J)}`.
///
/// Adding frame `i` is the rank-one update `D ← D + a_i a_i^T / σ²`, applied
/// to the inverse with Sherman-Morrison.
#[derive(Debug, Clone)]
pub struct GainState<'m> {
    model: &'m PlannerModel,
    labels: LabelSet,
    cov: DMatrix<f64>,
    since_refresh: usize,
}

impl<'m> GainState<'m> {
    pub fn new(model: &'m PlannerModel) -> Self {
        let cov = DMatrix::from_diagonal(&DVector::from_column_slice(model.gamma()));
        Self {
            model,
            labels: LabelSet::empty(),
            cov,
            since_refresh: 0,
        }
    }

    pub fn with_labels(model: &'m PlannerModel, labels: LabelSet) -> Result<Self> {
        let cov = model.restricted_covariance(&labels)?;
        Ok(Self {
            model,
            labels,
            cov,
            since_refresh: 0,
        })
    }

    pub fn model(&self) -> &'m PlannerModel {
        self.model
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// `tr(Σ_post^{(J)})`.
    pub fn trace_spread(&self) -> f64 {
        self.model.trace_of(&self.cov)
    }

    /// Trace reduction from adding frame `i`:
    /// `‖A D^{-1} a_i‖² / σ² / (1 + a_i^T D^{-1} a_i / σ²)`.
    pub fn gain(&self, i: usize) -> f64 {
        let s2 = self.model.sigma2();
        let row = self.model.a().row(i).transpose();
        let v = &self.cov * &row;
        let num = v.dot(&(self.model.ata() * &v)) / s2;
        let den = 1.0 + row.dot(&v) / s2;
        num / den
    }

    pub fn add(&mut self, i: usize) -> Result<()> {
        if i >= self.model.n() {
            return Err(Error::validation(format!("index {i} out of range")));
        }
        if self.labels.contains(i) {
            return Err(Error::validation(format!("index {i} already labeled")));
        }
        self.labels.push_unchecked(i);
        self.since_refresh += 1;
        if self.since_refresh >= REFRESH_INTERVAL {
            self.cov = self.model.restricted_covariance(&self.labels)?;
            self.since_refresh = 0;
            return Ok(());
        }
        let s2 = self.model.sigma2();
        let row = self.model.a().row(i).transpose();
        let v = &self.cov * &row;
        let den = s2 + row.dot(&v);
        self.cov.ger(-1.0 / den, &v, &v, 1.0);
        crate::linalg::symmetrize(&mut self.cov);
        Ok(())
    }
}

/// Trace-objective marginal gain `f_i(J)` from the incremental state.
pub fn marginal_gain_fast(state: &GainState<'_>, i: usize) -> f64 {
    state.gain(i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FrequencyGrid, TimeGrid, TransferMatrix};
    use crate::planner::{predictive, restricted_posterior};

    #[test]
    fn scalar_gain_is_one_half() {
        let tg = TimeGrid::new(1, 1.0).unwrap();
        let fg = FrequencyGrid::from_frequencies(vec![0.0]).unwrap();
        let model = PlannerModel::new(TransferMatrix::new(&tg, &fg), vec![1.0], 1.0).unwrap();
        let state = GainState::new(&model);
        assert!((marginal_gain_fast(&state, 0) - 0.5).abs() < 1e-15);
        assert!((state.trace_spread() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn gain_matches_naive_and_refresh_keeps_accuracy() {
        let tg = TimeGrid::new(80, 10.0).unwrap();
        let model = PlannerModel::from_frequencies(&tg, vec![0.0, 0.25, 1.1], vec![3.0, 1.0, 0.4], 0.02).unwrap();
        let mut state = GainState::new(&model);
        for step in 0..70 {
            let i = (step * 37) % 80;
            let before = {
                let rp = restricted_posterior(&model, state.labels(), None).unwrap();
                predictive(&model, &rp).covariance.trace()
            };
            let mut next = state.labels().clone();
            next.push_unchecked(i);
            let after = {
                let rp = restricted_posterior(&model, &next, None).unwrap();
                predictive(&model, &rp).covariance.trace()
            };
            let fast = marginal_gain_fast(&state, i);
            assert!(fast > 0.0);
            assert!(((before - after) - fast).abs() <= 1e-8 * fast.max(1e-3), "step {step}");
            state.add(i).unwrap();
            let fresh = model.restricted_covariance(state.labels()).unwrap();
            assert!((&fresh - state.covariance()).amax() < 1e-9);
        }
    }

    #[test]
    fn add_rejects_duplicates() {
        let tg = TimeGrid::new(4, 1.0).unwrap();
        let model = PlannerModel::from_frequencies(&tg, vec![0.0], vec![1.0], 1.0).unwrap();
        let mut s = GainState::new(&model);
        s.add(2).unwrap();
        assert!(s.add(2).is_err());
        assert!(s.add(4).is_err());
    }
}
