//! Comparison systems behind one predictor contract.

mod cluster;

pub use cluster::{cut_dendrogram, train_cluster_ensemble, ClusterConfig, ClusterEnsemble, ClusterModel, Linkage};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::base::BaseClassifiers;
use crate::competence::CompetenceModel;
use crate::data::{FeatureRecord, LabeledDataset, ModalityId, PrivacyLabel};
use crate::error::{DmfpError, Result};
use crate::fusion::{weighted_majority_vote, DecisionPath, FusionDecision, SelectedVote, Tallies, Vote};
use crate::linear::{
    train_calibrated, train_logistic, CalibratedClassifier, FeatureView, ProbabilityPair, TrainConfig,
};
use crate::neighbors::{PrivacyProfile, PROFILE_LEN};

/// One batch-prediction output line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub system: String,
    pub label: PrivacyLabel,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub posterior: Option<ProbabilityPair>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub path: Option<DecisionPath>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub selected: Vec<SelectedVote>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tallies: Option<Tallies>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

impl Prediction {
    pub fn plain(id: &str, system: &str, label: PrivacyLabel) -> Self {
        Prediction {
            id: id.to_string(),
            system: system.to_string(),
            label,
            posterior: None,
            path: None,
            selected: Vec::new(),
            tallies: None,
            note: None,
        }
    }

    pub fn from_decision(id: &str, system: &str, d: FusionDecision) -> Self {
        Prediction {
            path: Some(d.path),
            selected: d.selected,
            tallies: d.tallies,
            ..Prediction::plain(id, system, d.label)
        }
    }

    pub fn to_json_line(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| DmfpError::parse("prediction", e))
    }
}

/// Anything that maps a target record to a privacy label.
pub trait Predictor: Sync {
    fn name(&self) -> String;
    fn predict(&self, target: &FeatureRecord) -> Result<Prediction>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Argmax of the mean posterior.
    Average,
    /// Label of the single most confident classifier.
    MaxConfidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "modality")]
pub enum BaselineKind {
    SingleModality(ModalityId),
    /// Calibrated linear model over concatenated features; stands in for
    /// single-network feature concatenation.
    ConcatApprox,
    MajorityVote,
    DecisionFusionAvg,
    DecisionFusionMax,
    PolicySelect,
    StackedEnsemble,
    ClusterEnsemble,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 10] = [
        BaselineKind::SingleModality(ModalityId::Object),
        BaselineKind::SingleModality(ModalityId::Scene),
        BaselineKind::SingleModality(ModalityId::Tag),
        BaselineKind::ConcatApprox,
        BaselineKind::MajorityVote,
        BaselineKind::DecisionFusionAvg,
        BaselineKind::DecisionFusionMax,
        BaselineKind::PolicySelect,
        BaselineKind::StackedEnsemble,
        BaselineKind::ClusterEnsemble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::SingleModality(ModalityId::Object) => "object",
            BaselineKind::SingleModality(ModalityId::Scene) => "scene",
            BaselineKind::SingleModality(ModalityId::Tag) => "tag",
            BaselineKind::ConcatApprox => "concat-approx",
            BaselineKind::MajorityVote => "majority-vote",
            BaselineKind::DecisionFusionAvg => "fusion-avg",
            BaselineKind::DecisionFusionMax => "fusion-max",
            BaselineKind::PolicySelect => "policy-select",
            BaselineKind::StackedEnsemble => "stacked",
            BaselineKind::ClusterEnsemble => "cluster",
        }
    }
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = DmfpError;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|b| b.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                DmfpError::parse(
                    "baseline",
                    format!(
                        "unknown baseline {s:?}; expected one of {}",
                        BaselineKind::ALL.map(BaselineKind::name).join(", ")
                    ),
                )
            })
    }
}

/// Unweighted majority of the three argmax labels.
pub fn majority_vote_predict(pairs: &[ProbabilityPair; 3]) -> PrivacyLabel {
    let private = pairs.iter().filter(|p| p.label() == PrivacyLabel::Private).count();
    if private >= 2 {
        PrivacyLabel::Private
    } else {
        PrivacyLabel::Public
    }
}

pub fn decision_fusion_predict(pairs: &[ProbabilityPair; 3], mode: FusionMode) -> PrivacyLabel {
    match mode {
        FusionMode::Average => {
            ProbabilityPair::from_private(pairs.iter().map(|p| p.private).sum::<f64>() / 3.0).label()
        }
        FusionMode::MaxConfidence => pairs
            .iter()
            .fold(&pairs[0], |best, p| if p.max() > best.max() { p } else { best })
            .label(),
    }
}

/// One logistic selection policy per base classifier over the privacy
/// profile, each predicting whether its classifier will be right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModels {
    pub policies: [CompetenceModel; 3],
}

pub fn train_policy_select(
    estimate_set: &LabeledDataset,
    base: &BaseClassifiers,
    tcfg: &TrainConfig,
) -> Result<PolicyModels> {
    if estimate_set.is_empty() {
        return Err(DmfpError::Empty("estimate set".into()));
    }
    let golds = estimate_set.labels()?;
    let mut profiles = Vec::with_capacity(estimate_set.len());
    let mut correct: [Vec<bool>; 3] = Default::default();
    for (rec, gold) in estimate_set.records().iter().zip(&golds) {
        let pairs = base.predict(rec)?;
        for m in ModalityId::ALL {
            correct[m.index()].push(pairs[m.index()].label() == *gold);
        }
        profiles.push(PrivacyProfile::from_pairs(&pairs).0.to_vec());
    }
    let fit = |m: ModalityId| -> Result<CompetenceModel> {
        let labels = &correct[m.index()];
        let hits = labels.iter().filter(|&&c| c).count();
        if hits == 0 || hits == labels.len() {
            let rate = hits as f64 / labels.len() as f64;
            warn!("{m} policy sees a single outcome; using constant selection rate {rate}");
            return Ok(CompetenceModel::Constant { rate, dim: PROFILE_LEN });
        }
        Ok(CompetenceModel::Logistic {
            model: train_logistic(&profiles, labels, tcfg)?,
        })
    };
    Ok(PolicyModels {
        policies: [fit(ModalityId::Object)?, fit(ModalityId::Scene)?, fit(ModalityId::Tag)?],
    })
}

/// Majority vote over the classifiers whose policy fires (score > 0.5);
/// a plain majority vote when none does.
pub fn policy_select_predict(policies: &PolicyModels, pairs: &[ProbabilityPair; 3]) -> Result<FusionDecision> {
    let profile = PrivacyProfile::from_pairs(pairs);
    let mut scores = [0.0; 3];
    for m in ModalityId::ALL {
        scores[m.index()] = policies.policies[m.index()].score(profile.values())?;
    }
    let chosen: Vec<ModalityId> = ModalityId::ALL.into_iter().filter(|m| scores[m.index()] > 0.5).collect();
    let fallback = chosen.is_empty();
    let chosen = if fallback { ModalityId::ALL.to_vec() } else { chosen };
    let selected: Vec<SelectedVote> = chosen
        .iter()
        .map(|&m| SelectedVote {
            modality: m,
            competence: Some(scores[m.index()]),
            label: pairs[m.index()].label(),
            posterior: pairs[m.index()],
        })
        .collect();
    let votes: Vec<Vote> = selected
        .iter()
        .map(|s| Vote {
            label: s.label,
            weight: 1.0,
            posterior: s.posterior,
        })
        .collect();
    let (label, path, tallies) = weighted_majority_vote(&votes)?;
    Ok(FusionDecision {
        label,
        path: if fallback { DecisionPath::Fallback } else { path },
        selected,
        tallies: Some(tallies),
        competence: Some(scores),
    })
}

/// Meta-classifier over privacy profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedModel {
    pub meta: CalibratedClassifier,
    /// Profiles were computed out of fold rather than by the final base classifiers.
    pub honest: bool,
}

impl StackedModel {
    pub fn predict_pairs(&self, pairs: &[ProbabilityPair; 3]) -> Result<ProbabilityPair> {
        self.meta.predict_proba(PrivacyProfile::from_pairs(pairs).values())
    }
}

/// Trains the meta-classifier on profiles of the base-classifier training
/// set. With `honest`, each record's profile comes from base classifiers
/// trained without its fold.
pub fn train_stacked(
    train_set: &LabeledDataset,
    base: &BaseClassifiers,
    tcfg: &TrainConfig,
    honest: bool,
) -> Result<StackedModel> {
    let labels = train_set.labels()?;
    let profiles: Vec<Vec<f64>> = if honest {
        let folds = tcfg.folds.max(2);
        let assignment: Vec<usize> = (0..train_set.len()).map(|i| i % folds).collect();
        let mut out = vec![Vec::new(); train_set.len()];
        for f in 0..folds {
            let (held, rest): (Vec<usize>, Vec<usize>) = (0..train_set.len()).partition(|&i| assignment[i] == f);
            let fold_base = BaseClassifiers::train(&train_set.subset(&rest), tcfg)?;
            for i in held {
                out[i] = PrivacyProfile::from_pairs(&fold_base.predict(&train_set.records()[i])?).0.to_vec();
            }
        }
        out
    } else {
        train_set
            .records()
            .iter()
            .map(|r| Ok(PrivacyProfile::from_pairs(&base.predict(r)?).0.to_vec()))
            .collect::<Result<_>>()?
    };
    Ok(StackedModel {
        meta: train_calibrated(&profiles, &labels, tcfg, FeatureView::Profile)?,
        honest,
    })
}

pub fn train_concat(train_set: &LabeledDataset, tcfg: &TrainConfig) -> Result<CalibratedClassifier> {
    let features = train_set
        .records()
        .iter()
        .map(|r| FeatureView::Concat.extract(r))
        .collect::<Result<Vec<_>>>()?;
    train_calibrated(&features, &train_set.labels()?, tcfg, FeatureView::Concat)
}

/// Models needed by the trained baselines; absent entries were not requested.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineModels {
    pub concat: Option<CalibratedClassifier>,
    pub policy: Option<PolicyModels>,
    pub stacked: Option<StackedModel>,
    pub cluster: Option<ClusterEnsemble>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub honest_stacking: bool,
    pub cluster: ClusterConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            honest_stacking: false,
            cluster: ClusterConfig::default(),
        }
    }
}

impl BaselineModels {
    /// Trains whatever the requested kinds need.
    pub fn train(
        kinds: &[BaselineKind],
        train_set: &LabeledDataset,
        estimate_set: &LabeledDataset,
        base: &BaseClassifiers,
        tcfg: &TrainConfig,
        bcfg: &BaselineConfig,
    ) -> Result<Self> {
        let mut m = BaselineModels::default();
        for kind in kinds {
            match kind {
                BaselineKind::ConcatApprox if m.concat.is_none() => {
                    m.concat = Some(train_concat(train_set, tcfg)?);
                }
                BaselineKind::PolicySelect if m.policy.is_none() => {
                    m.policy = Some(train_policy_select(estimate_set, base, tcfg)?);
                }
                BaselineKind::StackedEnsemble if m.stacked.is_none() => {
                    m.stacked = Some(train_stacked(train_set, base, tcfg, bcfg.honest_stacking)?);
                }
                BaselineKind::ClusterEnsemble if m.cluster.is_none() => {
                    m.cluster = Some(train_cluster_ensemble(train_set, &bcfg.cluster, tcfg)?);
                }
                _ => {}
            }
        }
        Ok(m)
    }
}

/// A baseline bound to the models it reads.
pub struct Baseline<'a> {
    pub kind: BaselineKind,
    pub base: &'a BaseClassifiers,
    pub models: &'a BaselineModels,
}

fn missing(kind: BaselineKind) -> DmfpError {
    DmfpError::InvalidConfig(format!("baseline {kind} was not trained"))
}

impl Baseline<'_> {
    pub fn new<'a>(kind: BaselineKind, base: &'a BaseClassifiers, models: &'a BaselineModels) -> Result<Baseline<'a>> {
        let ok = match kind {
            BaselineKind::ConcatApprox => models.concat.is_some(),
            BaselineKind::PolicySelect => models.policy.is_some(),
            BaselineKind::StackedEnsemble => models.stacked.is_some(),
            BaselineKind::ClusterEnsemble => models.cluster.is_some(),
            _ => true,
        };
        if !ok {
            return Err(missing(kind));
        }
        Ok(Baseline { kind, base, models })
    }
}

impl Predictor for Baseline<'_> {
    fn name(&self) -> String {
        self.kind.name().to_string()
    }

    fn predict(&self, target: &FeatureRecord) -> Result<Prediction> {
        let name = self.kind.name();
        let id = target.id.as_str();
        let with_posterior = |p: ProbabilityPair| Prediction {
            posterior: Some(p),
            ..Prediction::plain(id, name, p.label())
        };
        match self.kind {
            BaselineKind::SingleModality(m) => Ok(with_posterior(self.base.get(m).predict_record(target)?)),
            BaselineKind::ConcatApprox => {
                let clf = self.models.concat.as_ref().ok_or_else(|| missing(self.kind))?;
                Ok(Prediction {
                    note: Some("approximation: linear model over concatenated features".into()),
                    ..with_posterior(clf.predict_record(target)?)
                })
            }
            BaselineKind::MajorityVote => {
                Ok(Prediction::plain(id, name, majority_vote_predict(&self.base.predict(target)?)))
            }
            BaselineKind::DecisionFusionAvg => Ok(Prediction::plain(
                id,
                name,
                decision_fusion_predict(&self.base.predict(target)?, FusionMode::Average),
            )),
            BaselineKind::DecisionFusionMax => Ok(Prediction::plain(
                id,
                name,
                decision_fusion_predict(&self.base.predict(target)?, FusionMode::MaxConfidence),
            )),
            BaselineKind::PolicySelect => {
                let policy = self.models.policy.as_ref().ok_or_else(|| missing(self.kind))?;
                let d = policy_select_predict(policy, &self.base.predict(target)?)?;
                Ok(Prediction::from_decision(id, name, d))
            }
            BaselineKind::StackedEnsemble => {
                let stacked = self.models.stacked.as_ref().ok_or_else(|| missing(self.kind))?;
                Ok(with_posterior(stacked.predict_pairs(&self.base.predict(target)?)?))
            }
            BaselineKind::ClusterEnsemble => {
                let cluster = self.models.cluster.as_ref().ok_or_else(|| missing(self.kind))?;
                let (c, p) = cluster.predict(target)?;
                Ok(Prediction {
                    note: Some(format!("cluster {c}")),
                    ..with_posterior(p)
                })
            }
        }
    }
}
