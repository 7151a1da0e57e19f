use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureRecord, LabeledDataset, ModalityId};
use crate::error::{DmfpError, Result};
use crate::linear::{train_calibrated, CalibratedClassifier, FeatureView, ProbabilityPair, TrainConfig};

/// One calibrated classifier per modality, held in object, scene, tag order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseClassifiers {
    classifiers: [CalibratedClassifier; 3],
}

impl BaseClassifiers {
    pub fn new(classifiers: [CalibratedClassifier; 3]) -> Result<Self> {
        for (clf, m) in classifiers.iter().zip(ModalityId::ALL) {
            if clf.view != FeatureView::Modality(m) {
                return Err(DmfpError::InvalidConfig(format!(
                    "base classifier in the {m} slot reads {:?}",
                    clf.view
                )));
            }
        }
        Ok(BaseClassifiers { classifiers })
    }

    /// Trains the three modality classifiers (concurrently) on `train_set`.
    pub fn train(train_set: &LabeledDataset, cfg: &TrainConfig) -> Result<Self> {
        let labels = train_set.labels()?;
        let trained: Vec<Result<CalibratedClassifier>> = ModalityId::ALL
            .par_iter()
            .map(|&m| {
                let features = train_set
                    .records()
                    .iter()
                    .map(|r| r.block(m).map(<[f64]>::to_vec))
                    .collect::<Result<Vec<_>>>()?;
                train_calibrated(&features, &labels, cfg, FeatureView::Modality(m))
            })
            .collect();
        let mut it = trained.into_iter();
        let mut next = || it.next().expect("three modalities");
        Ok(BaseClassifiers {
            classifiers: [next()?, next()?, next()?],
        })
    }

    pub fn get(&self, m: ModalityId) -> &CalibratedClassifier {
        &self.classifiers[m.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ModalityId, &CalibratedClassifier)> {
        ModalityId::ALL.into_iter().zip(self.classifiers.iter())
    }

    /// Posteriors of all three classifiers for `rec`.
    pub fn predict(&self, rec: &FeatureRecord) -> Result<[ProbabilityPair; 3]> {
        Ok([
            self.classifiers[0].predict_record(rec)?,
            self.classifiers[1].predict_record(rec)?,
            self.classifiers[2].predict_record(rec)?,
        ])
    }
}
