use serde::{Deserialize, Serialize};

use crate::io::{LabeledPoint, PrunedPrior};
use crate::model::LabelSet;
use crate::planner::{
    greedy_plan, greedy_step, predictive_variance, restricted_posterior, Direction, LabelPlan, PlannerModel,
    SpreadMeasure,
};

use super::ServiceError;

/// Where a suggestion came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuggestionSource {
    Plan,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub index: usize,
    pub time: f64,
    pub expected_gain: f64,
    pub current_spread: f64,
    pub source: SuggestionSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub label_count: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub spread: f64,
    pub labeled: Vec<LabeledPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_band: Vec<f64>,
    pub labeled_points: Vec<LabeledPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub n: usize,
    pub frame_rate: f64,
    pub frequencies: Vec<f64>,
    pub alpha: Vec<f64>,
    pub sigma2: f64,
    pub plan: Vec<usize>,
    pub labels: Vec<LabeledPoint>,
    pub spread: f64,
    pub created_at: u64,
    pub updated_at: u64,
}

/// One interactive labeling session: a planner model, its precomputed trace
/// plan and the labels submitted so far, in submission order.
#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    prior: PrunedPrior,
    model: PlannerModel,
    plan: LabelPlan,
    labels: Vec<LabeledPoint>,
    created_at: u64,
    updated_at: u64,
}

pub(crate) fn now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl Session {
    pub fn new(id: String, prior: PrunedPrior, n: usize, frame_rate: f64) -> Result<Self, ServiceError> {
        let model = prior
            .planner_model(n, frame_rate)
            .map_err(|e| ServiceError::bad_request(&e))?;
        let plan = greedy_plan(&model, n, SpreadMeasure::Trace, Direction::Minimize)
            .map_err(|e| ServiceError::from_error(&e))?;
        let t = now();
        Ok(Self {
            id,
            prior,
            model,
            plan,
            labels: Vec::new(),
            created_at: t,
            updated_at: t,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn prior(&self) -> &PrunedPrior {
        &self.prior
    }

    pub fn model(&self) -> &PlannerModel {
        &self.model
    }

    pub fn plan(&self) -> &LabelPlan {
        &self.plan
    }

    pub fn labels(&self) -> &[LabeledPoint] {
        &self.labels
    }

    fn label_set(&self) -> LabelSet {
        let indices = self.labels.iter().map(|p| p.index).collect();
        LabelSet::new(indices, self.model.n()).expect("labels are validated on submit")
    }

    fn follows_plan(&self) -> bool {
        let k = self.labels.len();
        let mut prefix = self.plan.indices[..k].to_vec();
        let mut got: Vec<usize> = self.labels.iter().map(|p| p.index).collect();
        prefix.sort_unstable();
        got.sort_unstable();
        prefix == got
    }

    pub fn spread(&self) -> Result<f64, ServiceError> {
        let cov = self
            .model
            .restricted_covariance(&self.label_set())
            .map_err(|e| ServiceError::from_error(&e))?;
        Ok(self.model.trace_of(&cov))
    }

    pub fn suggestion(&self) -> Result<Suggestion, ServiceError> {
        let k = self.labels.len();
        if k == self.model.n() {
            return Err(ServiceError::conflict("every frame is labeled"));
        }
        let current_spread = self.spread()?;
        let (index, expected_gain, source) = if self.follows_plan() {
            (self.plan.indices[k], self.plan.gains[k], SuggestionSource::Plan)
        } else {
            let step = greedy_step(&self.model, &self.label_set(), SpreadMeasure::Trace, Direction::Minimize)
                .map_err(|e| ServiceError::from_error(&e))?
                .ok_or_else(|| ServiceError::conflict("every frame is labeled"))?;
            (step.index, step.gain, SuggestionSource::Greedy)
        };
        Ok(Suggestion {
            index,
            time: self.model.times()[index],
            expected_gain,
            current_spread,
            source,
        })
    }

    pub fn submit(&mut self, index: usize, value: f64) -> Result<PosteriorSummary, ServiceError> {
        if index >= self.model.n() {
            return Err(ServiceError::validation(format!(
                "index {index} is outside 0..{}",
                self.model.n()
            )));
        }
        if !value.is_finite() {
            return Err(ServiceError::validation("label value must be finite"));
        }
        if self.labels.iter().any(|p| p.index == index) {
            return Err(ServiceError::conflict(format!("frame {index} is already labeled")));
        }
        self.labels.push(LabeledPoint { index, value });
        match self.summary() {
            Ok(s) => {
                self.updated_at = now();
                Ok(s)
            }
            Err(e) => {
                self.labels.pop();
                Err(e)
            }
        }
    }

    pub fn undo(&mut self) -> Result<PosteriorSummary, ServiceError> {
        if self.labels.pop().is_none() {
            return Err(ServiceError::conflict("no label to undo"));
        }
        self.updated_at = now();
        self.summary()
    }

    /// Posterior given exactly the current labels, recomputed from scratch.
    pub fn summary(&self) -> Result<PosteriorSummary, ServiceError> {
        let labels = self.label_set();
        let values: Vec<f64> = self.labels.iter().map(|p| p.value).collect();
        let rp = restricted_posterior(&self.model, &labels, Some(&values)).map_err(|e| ServiceError::from_error(&e))?;
        let mean = (self.model.a() * &rp.mean).iter().copied().collect();
        let std = predictive_variance(&self.model, &rp.covariance)
            .into_iter()
            .map(f64::sqrt)
            .collect();
        Ok(PosteriorSummary {
            label_count: self.labels.len(),
            mean,
            std,
            spread: self.model.trace_of(&rp.covariance),
            labeled: self.labels.clone(),
        })
    }

    pub fn curve(&self) -> Result<Curve, ServiceError> {
        let s = self.summary()?;
        Ok(Curve {
            times: self.model.times().to_vec(),
            mean: s.mean,
            std_band: s.std,
            labeled_points: s.labeled,
        })
    }

    pub fn state(&self) -> Result<SessionState, ServiceError> {
        Ok(SessionState {
            id: self.id.clone(),
            n: self.model.n(),
            frame_rate: self.model.transfer().time_grid().frame_rate(),
            frequencies: self.prior.frequencies.clone(),
            alpha: self.prior.alpha.clone(),
            sigma2: self.prior.sigma2,
            plan: self.plan.indices.clone(),
            labels: self.labels.clone(),
            spread: self.spread()?,
            created_at: self.created_at,
            updated_at: self.updated_at,
        })
    }
}
