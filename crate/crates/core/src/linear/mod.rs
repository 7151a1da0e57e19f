//! Linear base classifiers with sigmoid calibration, and the logistic
//! model used for competence estimation.

mod calibrated;
mod platt;
mod sgd;

pub use calibrated::{train_calibrated, CalibratedClassifier, CalibratedFold, FeatureView};
pub use platt::{platt_fit, PlattSigmoid};
pub use sgd::{train_hinge, train_logistic};

use serde::{Deserialize, Serialize};

use crate::data::PrivacyLabel;
use crate::error::{DmfpError, Result};

/// Posterior over the two privacy classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityPair {
    pub private: f64,
    pub public: f64,
}

impl ProbabilityPair {
    pub fn from_private(private: f64) -> Self {
        let private = private.clamp(0.0, 1.0);
        ProbabilityPair {
            private,
            public: 1.0 - private,
        }
    }

    /// Argmax label; an exact 0.5 resolves to public.
    pub fn label(&self) -> PrivacyLabel {
        self.label_with_tie(PrivacyLabel::Public)
    }

    pub fn label_with_tie(&self, tie: PrivacyLabel) -> PrivacyLabel {
        if self.private > self.public {
            PrivacyLabel::Private
        } else if self.private < self.public {
            PrivacyLabel::Public
        } else {
            tie
        }
    }

    pub fn max(&self) -> f64 {
        self.private.max(self.public)
    }

    pub fn of(&self, label: PrivacyLabel) -> f64 {
        match label {
            PrivacyLabel::Private => self.private,
            PrivacyLabel::Public => self.public,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Hinge,
    Logistic,
}

/// `score = w·x + b`; positive scores lean private.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub loss_kind: LossKind,
}

impl LinearModel {
    pub fn zeros(dim: usize, loss_kind: LossKind) -> Self {
        LinearModel {
            weights: vec![0.0; dim],
            bias: 0.0,
            loss_kind,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(DmfpError::LengthMismatch {
                expected: self.weights.len(),
                actual: x.len(),
            });
        }
        Ok(dot(&self.weights, x) + self.bias)
    }

    /// Logistic probability of the positive class, `sigmoid(w·x + b)`.
    pub fn probability(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.decision(x)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2_penalty: f64,
    pub seed: u64,
    pub folds: usize,
    /// Reweight examples so both classes carry equal total weight.
    pub balanced: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 0.1,
            l2_penalty: 1e-4,
            seed: 0,
            folds: 3,
            balanced: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.epochs == 0 {
            bad.push("epochs must be positive");
        }
        // A zero rate is accepted: it leaves the model at its zero initialization.
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            bad.push("learning_rate must be a finite non-negative number");
        }
        if !self.l2_penalty.is_finite() || self.l2_penalty < 0.0 {
            bad.push("l2_penalty must be a finite non-negative number");
        }
        if self.folds == 0 {
            bad.push("folds must be positive");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(DmfpError::InvalidConfig(bad.join("; ")))
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`].
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Checks a feature matrix: non-empty, rectangular, positive width, finite.
pub(crate) fn check_matrix(features: &[Vec<f64>], n_labels: usize) -> Result<usize> {
    if features.is_empty() {
        return Err(DmfpError::Empty("no training examples".into()));
    }
    if features.len() != n_labels {
        return Err(DmfpError::LengthMismatch {
            expected: features.len(),
            actual: n_labels,
        });
    }
    let dim = features[0].len();
    if dim == 0 {
        return Err(DmfpError::DimensionMismatch(
            "features must have at least one dimension".into(),
        ));
    }
    for row in features {
        if row.len() != dim {
            return Err(DmfpError::LengthMismatch {
                expected: dim,
                actual: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(DmfpError::NonFinite("training features".into()));
        }
    }
    Ok(dim)
}
