//! Canonical data model for questions, stepwise trajectories, labels, and
//! scores.
//!
//! A trajectory is a question followed by an ordered list of steps and a
//! final answer token. Steps carry fixed-length numeric feature vectors as
//! the observable surrogate for step text; simulator-born steps additionally
//! carry their latent correctness. All types are immutable values after
//! construction and safe to share across workers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::AggregationMode;

/// One reasoning step: 1-based position, observable features, and (for
/// simulator-born data) the latent correctness ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub features: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latent_correct: Option<bool>,
}

/// A question with an ordered list of steps and a discrete final answer.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub question_id: String,
    pub steps: Vec<Step>,
    pub final_answer: String,
    pub gold_answer: String,
    /// Success indicator: `final_answer == gold_answer`.
    pub success: bool,
}

impl Trajectory {
    pub fn new(
        question_id: impl Into<String>,
        steps: Vec<Step>,
        final_answer: impl Into<String>,
        gold_answer: impl Into<String>,
    ) -> Result<Self> {
        let question_id = question_id.into();
        let final_answer = final_answer.into();
        let gold_answer = gold_answer.into();
        if steps.is_empty() {
            return Err(Error::Invariant {
                field: "steps".into(),
                message: format!("trajectory {question_id} has no steps (H >= 1 required)"),
            });
        }
        for (i, step) in steps.iter().enumerate() {
            if step.index != i + 1 {
                return Err(Error::Invariant {
                    field: "steps.index".into(),
                    message: format!(
                        "trajectory {question_id}: step at position {} has index {}, expected {}",
                        i,
                        step.index,
                        i + 1
                    ),
                });
            }
        }
        let dim = steps[0].features.len();
        if let Some(bad) = steps.iter().find(|s| s.features.len() != dim) {
            return Err(Error::FeatureDim {
                question_id,
                expected: dim,
                found: bad.features.len(),
            });
        }
        let success = final_answer == gold_answer;
        Ok(Self {
            question_id,
            steps,
            final_answer,
            gold_answer,
            success,
        })
    }

    /// Number of steps H.
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Feature dimension shared by all steps.
    pub fn feature_dim(&self) -> usize {
        self.steps[0].features.len()
    }
}

/// Per-step correctness labels for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLabels {
    pub labels: Vec<bool>,
    /// 1-based index of the first `false` label, if any.
    pub first_error: Option<usize>,
}

impl StepLabels {
    pub fn new(labels: Vec<bool>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Invariant {
                field: "labels".into(),
                message: "labels must cover H >= 1 steps".into(),
            });
        }
        let first_error = labels.iter().position(|&c| !c).map(|i| i + 1);
        Ok(Self {
            labels,
            first_error,
        })
    }

    /// Validate a deserialized value, where `first_error` came from the wire.
    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::Invariant {
                field: "labels".into(),
                message: "labels must cover H >= 1 steps".into(),
            });
        }
        let expected = self.labels.iter().position(|&c| !c).map(|i| i + 1);
        if self.first_error != expected {
            return Err(Error::Invariant {
                field: "first_error".into(),
                message: format!(
                    "first_error is {:?} but labels imply {:?}",
                    self.first_error, expected
                ),
            });
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.labels.len()
    }

    /// True when no `true` label follows the first `false` one — the corpus
    /// shape produced by mark-after-first-error annotation.
    pub fn monotone_falsity(&self) -> bool {
        match self.first_error {
            None => true,
            Some(e) => self.labels[e - 1..].iter().all(|&c| !c),
        }
    }
}

/// Partition step indices 1..=H into the ascending index lists of correct
/// steps C and wrong steps W.
pub fn split_labels(labels: &StepLabels) -> (Vec<usize>, Vec<usize>) {
    let mut correct = Vec::new();
    let mut wrong = Vec::new();
    for (i, &c) in labels.labels.iter().enumerate() {
        if c {
            correct.push(i + 1);
        } else {
            wrong.push(i + 1);
        }
    }
    (correct, wrong)
}

/// Raw per-step Q estimates plus the aggregated trajectory-level score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrajectory {
    pub trajectory_ref: String,
    pub step_scores: Vec<f64>,
    pub trajectory_score: f64,
}

impl ScoredTrajectory {
    pub fn new(
        trajectory_ref: impl Into<String>,
        step_scores: Vec<f64>,
        mode: AggregationMode,
    ) -> Result<Self> {
        let trajectory_score = crate::eval::aggregate_trajectory_score(&step_scores, mode)?;
        Ok(Self {
            trajectory_ref: trajectory_ref.into(),
            step_scores,
            trajectory_score,
        })
    }
}
