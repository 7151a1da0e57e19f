use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::platt::{platt_fit, PlattSigmoid};
use super::sgd::train_hinge;
use super::{check_matrix, LinearModel, LossKind, ProbabilityPair, TrainConfig};
use crate::data::{concat_modalities, FeatureRecord, ModalityId, PrivacyLabel};
use crate::error::{DmfpError, Result};

/// Which part of a record a classifier reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "modality")]
pub enum FeatureView {
    Modality(ModalityId),
    /// Object, scene and tag blocks concatenated.
    Concat,
    /// The six-value privacy profile produced by the base classifiers.
    Profile,
}

impl FeatureView {
    pub fn extract(&self, rec: &FeatureRecord) -> Result<Vec<f64>> {
        match self {
            FeatureView::Modality(m) => Ok(rec.block(*m)?.to_vec()),
            FeatureView::Concat => concat_modalities(rec),
            FeatureView::Profile => Err(DmfpError::InvalidConfig(
                "profile-view classifiers take encoded profiles, not records".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedFold {
    pub model: LinearModel,
    pub sigmoid: PlattSigmoid,
}

/// A linear SVM calibrated by cross-validation: each fold's model is fit on
/// the other folds and its sigmoid on the held-out fold; predictions
/// average the fold probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedClassifier {
    pub view: FeatureView,
    pub dim: usize,
    pub folds: Vec<CalibratedFold>,
    pub config: TrainConfig,
}

impl CalibratedClassifier {
    /// A classifier that returns `p_private` for every input.
    pub fn constant(view: FeatureView, dim: usize, p_private: f64) -> Self {
        CalibratedClassifier {
            view,
            dim,
            folds: vec![CalibratedFold {
                model: LinearModel::zeros(dim, LossKind::Hinge),
                sigmoid: PlattSigmoid::constant(p_private),
            }],
            config: TrainConfig::default(),
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<ProbabilityPair> {
        if x.len() != self.dim {
            return Err(DmfpError::LengthMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        let mut total = 0.0;
        for fold in &self.folds {
            total += fold.sigmoid.apply(fold.model.decision(x)?);
        }
        Ok(ProbabilityPair::from_private(total / self.folds.len() as f64))
    }

    pub fn predict_record(&self, rec: &FeatureRecord) -> Result<ProbabilityPair> {
        self.predict_proba(&self.view.extract(rec)?)
    }
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
fn stratified_folds(labels: &[PrivacyLabel], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    for class in PrivacyLabel::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            assignment[i] = k % folds;
        }
    }
    assignment
}

/// Trains a [`CalibratedClassifier`] with `cfg.folds`-fold stratified
/// cross-calibration. With a single fold the sigmoid is fit on the training
/// scores themselves.
pub fn train_calibrated(
    features: &[Vec<f64>],
    labels: &[PrivacyLabel],
    cfg: &TrainConfig,
    view: FeatureView,
) -> Result<CalibratedClassifier> {
    cfg.validate()?;
    let dim = check_matrix(features, labels.len())?;
    let n_private = labels.iter().filter(|l| l.is_private()).count();
    if n_private == 0 || n_private == labels.len() {
        return Err(DmfpError::SingleClass(format!(
            "{} examples, all {}",
            labels.len(),
            labels[0]
        )));
    }

    let mut folds = Vec::with_capacity(cfg.folds);
    if cfg.folds == 1 {
        let model = train_hinge(features, labels, cfg)?;
        let scores = scores_of(&model, features.iter())?;
        let sigmoid = platt_fit(&scores, labels)?;
        folds.push(CalibratedFold { model, sigmoid });
    } else {
        let assignment = stratified_folds(labels, cfg.folds, cfg.seed);
        // Every held-out fold holding both classes implies every training
        // complement does too; check all before fitting any.
        for f in 0..cfg.folds {
            let held = (0..labels.len()).filter(|&i| assignment[i] == f);
            let (n, private) = held.fold((0, 0), |(n, p), i| (n + 1, p + usize::from(labels[i].is_private())));
            if private == 0 || private == n {
                return Err(DmfpError::DegenerateFold {
                    fold: f,
                    folds: cfg.folds,
                });
            }
        }
        for f in 0..cfg.folds {
            let held: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] == f).collect();
            let (train_x, train_y): (Vec<Vec<f64>>, Vec<PrivacyLabel>) = (0..labels.len())
                .filter(|&i| assignment[i] != f)
                .map(|i| (features[i].clone(), labels[i]))
                .unzip();
            let fold_cfg = TrainConfig {
                seed: cfg.seed.wrapping_add(f as u64 + 1),
                ..cfg.clone()
            };
            let model = train_hinge(&train_x, &train_y, &fold_cfg)?;
            let scores = scores_of(&model, held.iter().map(|&i| &features[i]))?;
            let held_labels: Vec<PrivacyLabel> = held.iter().map(|&i| labels[i]).collect();
            let sigmoid = platt_fit(&scores, &held_labels)?;
            folds.push(CalibratedFold { model, sigmoid });
        }
    }
    Ok(CalibratedClassifier {
        view,
        dim,
        folds,
        config: cfg.clone(),
    })
}

fn scores_of<'a>(model: &LinearModel, xs: impl Iterator<Item = &'a Vec<f64>>) -> Result<Vec<f64>> {
    xs.map(|x| model.decision(x)).collect()
}
