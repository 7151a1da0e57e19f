//! Competence features and competence classifiers.
//!
//! For a target and a base classifier, the competence vector records
//! whether the classifier labels each visual neighbor correctly (`phi1`),
//! each privacy-profile neighbor correctly (`phi2`), and its own maximum
//! posterior on the target (`phi3`). One logistic model per modality is fit
//! on these vectors over the estimate set, labeled by whether the base
//! classifier got each estimate record right.

use std::collections::{BTreeMap, HashSet};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base::BaseClassifiers;
use crate::data::{concat_modalities, FeatureRecord, LabeledDataset, ModalityId, PrivacyLabel};
use crate::error::{DmfpError, Result};
use crate::linear::{
    train_logistic, CalibratedClassifier, FeatureView, LinearModel, ProbabilityPair, TrainConfig,
};
use crate::neighbors::{Neighborhood, NeighborhoodConfig, PrivacyProfile, ProfileIndex, VisualIndex};

/// How a neighborhood-derived block enters the feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockMode {
    #[default]
    Keep,
    /// Neighborhood not consulted; block filled with zeros at full length.
    Zero,
    /// Block removed from the vector.
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompetenceOptions {
    pub phi1: BlockMode,
    pub phi2: BlockMode,
    pub use_phi3: bool,
    /// Zero entries whose record is not in both neighborhoods.
    pub intersection_mode: bool,
    /// Use the posterior of the gold label instead of 0/1 correctness.
    pub probability_features: bool,
}

impl Default for CompetenceOptions {
    fn default() -> Self {
        CompetenceOptions {
            phi1: BlockMode::Keep,
            phi2: BlockMode::Keep,
            use_phi3: true,
            intersection_mode: false,
            probability_features: false,
        }
    }
}

impl CompetenceOptions {
    pub fn feature_len(&self, k_v: usize, k_p: usize) -> usize {
        let block = |mode: BlockMode, k: usize| if mode == BlockMode::Drop { 0 } else { k };
        block(self.phi1, k_v) + block(self.phi2, k_p) + usize::from(self.use_phi3)
    }

    fn needs_visual(&self) -> bool {
        self.phi1 == BlockMode::Keep || (self.intersection_mode && self.phi2 == BlockMode::Keep)
    }

    fn needs_privacy(&self) -> bool {
        self.phi2 == BlockMode::Keep || (self.intersection_mode && self.phi1 == BlockMode::Keep)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetenceVector {
    pub modality: ModalityId,
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
    pub phi3: Option<f64>,
    /// Unpadded neighborhood sizes behind `phi1` and `phi2`.
    pub visual_count: usize,
    pub privacy_count: usize,
}

impl CompetenceVector {
    pub fn len(&self) -> usize {
        self.phi1.len() + self.phi2.len() + usize::from(self.phi3.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_features(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.phi1);
        v.extend_from_slice(&self.phi2);
        v.extend(self.phi3);
        v
    }

    /// Fraction of correct predictions among the real (unpadded) visual neighbors.
    pub fn visual_accuracy(&self) -> f64 {
        fraction(self.phi1.iter().take(self.visual_count).sum(), self.visual_count)
    }

    pub fn privacy_accuracy(&self) -> f64 {
        fraction(self.phi2.iter().take(self.privacy_count).sum(), self.privacy_count)
    }

    /// Fraction correct over both neighborhoods pooled.
    pub fn pooled_accuracy(&self) -> f64 {
        let hits: f64 = self.phi1.iter().take(self.visual_count).sum::<f64>()
            + self.phi2.iter().take(self.privacy_count).sum::<f64>();
        fraction(hits, self.visual_count + self.privacy_count)
    }
}

fn fraction(hits: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        hits / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetenceSample {
    pub phi: CompetenceVector,
    /// The base classifier predicted this record's gold label.
    pub competent: bool,
}

/// Evidence about one neighbor: whether the classifier got it right and the
/// posterior it assigned to the gold label.
#[derive(Clone, Copy)]
struct Evidence {
    correct: bool,
    gold_posterior: f64,
}

impl Evidence {
    fn of(pair: &ProbabilityPair, gold: PrivacyLabel) -> Self {
        Evidence {
            correct: pair.label() == gold,
            gold_posterior: pair.of(gold),
        }
    }

    fn value(&self, probability_features: bool) -> f64 {
        match (probability_features, self.correct) {
            (true, _) => self.gold_posterior,
            (false, true) => 1.0,
            (false, false) => 0.0,
        }
    }
}

/// Builds one block: neighbor evidence in rank order, masked to the other
/// neighborhood in intersection mode, zero-padded to `k`.
fn block(
    mode: BlockMode,
    k: usize,
    nb: Option<&Neighborhood>,
    other: Option<&HashSet<&str>>,
    opts: &CompetenceOptions,
    mut evidence: impl FnMut(&str) -> Result<Evidence>,
) -> Result<(Vec<f64>, usize)> {
    match mode {
        BlockMode::Drop => Ok((Vec::new(), 0)),
        BlockMode::Zero => Ok((vec![0.0; k], 0)),
        BlockMode::Keep => {
            let nb = nb.expect("neighborhood computed for kept block");
            if nb.is_empty() {
                return Err(DmfpError::NoNeighbors(format!("{:?} neighborhood is empty", nb.kind)));
            }
            let mut out = Vec::with_capacity(k);
            for id in nb.member_ids.iter().take(k) {
                let masked = other.is_some_and(|set| !set.contains(id.as_str()));
                let ev = evidence(id)?;
                out.push(if masked { 0.0 } else { ev.value(opts.probability_features) });
            }
            let count = out.len();
            out.resize(k, 0.0);
            Ok((out, count))
        }
    }
}

fn assemble(
    modality: ModalityId,
    target: &ProbabilityPair,
    nv: Option<&Neighborhood>,
    np: Option<&Neighborhood>,
    ncfg: &NeighborhoodConfig,
    opts: &CompetenceOptions,
    mut evidence: impl FnMut(&str) -> Result<Evidence>,
) -> Result<CompetenceVector> {
    let (nv_set, np_set) = if opts.intersection_mode {
        (
            nv.map(|n| n.member_ids.iter().map(String::as_str).collect::<HashSet<_>>()),
            np.map(|n| n.member_ids.iter().map(String::as_str).collect::<HashSet<_>>()),
        )
    } else {
        (None, None)
    };
    let (phi1, visual_count) = block(opts.phi1, ncfg.k_v, nv, np_set.as_ref(), opts, &mut evidence)?;
    let (phi2, privacy_count) = block(opts.phi2, ncfg.k_p, np, nv_set.as_ref(), opts, &mut evidence)?;
    Ok(CompetenceVector {
        modality,
        phi1,
        phi2,
        phi3: opts.use_phi3.then(|| target.max()),
        visual_count,
        privacy_count,
    })
}

/// Competence vector of classifier `b` for `target`, re-predicting every
/// neighbor from its features in `estimate_set`.
pub fn competence_features(
    target: &FeatureRecord,
    nv: &Neighborhood,
    np: &Neighborhood,
    b: &CalibratedClassifier,
    estimate_set: &LabeledDataset,
    ncfg: &NeighborhoodConfig,
    opts: &CompetenceOptions,
) -> Result<CompetenceVector> {
    let modality = match b.view {
        FeatureView::Modality(m) => m,
        other => {
            return Err(DmfpError::InvalidConfig(format!(
                "competence is defined for modality classifiers, not {other:?}"
            )))
        }
    };
    let target_pair = b.predict_record(target)?;
    assemble(modality, &target_pair, Some(nv), Some(np), ncfg, opts, |id| {
        let rec = estimate_set
            .get(id)
            .ok_or_else(|| DmfpError::UnknownRecord(id.to_string()))?;
        Ok(Evidence::of(&b.predict_record(rec)?, rec.gold()?))
    })
}

/// The estimate set with its base-classifier predictions memoized and its
/// visual and profile indexes built once.
#[derive(Debug, Clone)]
pub struct EstimateContext {
    dataset: LabeledDataset,
    visual: VisualIndex,
    profiles: ProfileIndex,
    predictions: Vec<[ProbabilityPair; 3]>,
    golds: Vec<PrivacyLabel>,
}

/// Neighborhoods and competence vectors computed for one target.
#[derive(Debug, Clone)]
pub struct TargetCompetence {
    pub visual: Option<Neighborhood>,
    pub privacy: Option<Neighborhood>,
    pub profile: PrivacyProfile,
    pub vectors: [CompetenceVector; 3],
}

impl EstimateContext {
    pub fn build(estimate_set: &LabeledDataset, base: &BaseClassifiers) -> Result<Self> {
        if estimate_set.is_empty() {
            return Err(DmfpError::Empty("estimate set".into()));
        }
        let golds = estimate_set.labels()?;
        let predictions = estimate_set
            .records()
            .par_iter()
            .map(|r| base.predict(r))
            .collect::<Result<Vec<_>>>()?;
        let profiles = ProfileIndex::new(
            estimate_set
                .records()
                .iter()
                .zip(&predictions)
                .map(|(r, p)| (r.id.clone(), PrivacyProfile::from_pairs(p)))
                .collect(),
        );
        Ok(EstimateContext {
            visual: VisualIndex::build(estimate_set)?,
            dataset: estimate_set.clone(),
            profiles,
            predictions,
            golds,
        })
    }

    pub fn dataset(&self) -> &LabeledDataset {
        &self.dataset
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    pub fn prediction(&self, i: usize) -> &[ProbabilityPair; 3] {
        &self.predictions[i]
    }

    pub fn gold(&self, i: usize) -> PrivacyLabel {
        self.golds[i]
    }

    fn evidence(&self, id: &str, m: ModalityId) -> Result<Evidence> {
        let i = self
            .dataset
            .position(id)
            .ok_or_else(|| DmfpError::UnknownRecord(id.to_string()))?;
        Ok(Evidence::of(&self.predictions[i][m.index()], self.golds[i]))
    }

    /// Neighborhoods in the estimate set and competence vectors of all three
    /// base classifiers for a target whose posteriors are `pairs`.
    pub fn target_competence(
        &self,
        target: &FeatureRecord,
        pairs: &[ProbabilityPair; 3],
        ncfg: &NeighborhoodConfig,
        opts: &CompetenceOptions,
    ) -> Result<TargetCompetence> {
        let profile = PrivacyProfile::from_pairs(pairs);
        let visual = if opts.needs_visual() {
            Some(self.visual.query(
                &concat_modalities(target)?,
                Some(&target.id),
                ncfg.k_v,
                ncfg.visual_metric,
                ncfg.include_self,
            )?)
        } else {
            None
        };
        let privacy = if opts.needs_privacy() {
            Some(self.profiles.query(&profile, Some(&target.id), ncfg.k_p, ncfg.include_self)?)
        } else {
            None
        };
        let vector = |m: ModalityId| {
            assemble(
                m,
                &pairs[m.index()],
                visual.as_ref(),
                privacy.as_ref(),
                ncfg,
                opts,
                |id| self.evidence(id, m),
            )
        };
        let vectors = [
            vector(ModalityId::Object)?,
            vector(ModalityId::Scene)?,
            vector(ModalityId::Tag)?,
        ];
        Ok(TargetCompetence {
            visual,
            privacy,
            profile,
            vectors,
        })
    }

    /// Competence samples for every estimate record, each treated as a
    /// target against the rest of the estimate set.
    pub fn samples(
        &self,
        ncfg: &NeighborhoodConfig,
        opts: &CompetenceOptions,
    ) -> Result<Vec<[CompetenceSample; 3]>> {
        if self.len() < 2 && !ncfg.include_self {
            return Err(DmfpError::NoNeighbors(format!(
                "estimate set of {} record(s) leaves no neighbors after excluding the target",
                self.len()
            )));
        }
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                let rec = &self.dataset.records()[i];
                let pairs = &self.predictions[i];
                let tc = self.target_competence(rec, pairs, ncfg, opts)?;
                let gold = self.golds[i];
                let [o, s, t] = tc.vectors;
                Ok([o, s, t].map(|phi| {
                    let competent = pairs[phi.modality.index()].label() == gold;
                    CompetenceSample { phi, competent }
                }))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CompetenceModel {
    Logistic { model: LinearModel },
    /// Fallback when every training label was identical.
    Constant { rate: f64, dim: usize },
}

impl CompetenceModel {
    pub fn dim(&self) -> usize {
        match self {
            CompetenceModel::Logistic { model } => model.dim(),
            CompetenceModel::Constant { dim, .. } => *dim,
        }
    }

    pub fn score(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.dim() {
            return Err(DmfpError::LengthMismatch {
                expected: self.dim(),
                actual: features.len(),
            });
        }
        match self {
            CompetenceModel::Logistic { model } => model.probability(features),
            CompetenceModel::Constant { rate, .. } => Ok(*rate),
        }
    }
}

/// One competence classifier per modality plus the configuration that
/// produced its features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetenceModelSet {
    pub models: BTreeMap<ModalityId, CompetenceModel>,
    pub neighborhood: NeighborhoodConfig,
    pub options: CompetenceOptions,
}

impl CompetenceModelSet {
    pub fn feature_len(&self) -> usize {
        self.options
            .feature_len(self.neighborhood.k_v, self.neighborhood.k_p)
    }
}

/// Probability that the base classifier behind `phi` is competent.
pub fn predict_competence(models: &CompetenceModelSet, phi: &CompetenceVector) -> Result<f64> {
    let model = models
        .models
        .get(&phi.modality)
        .ok_or_else(|| DmfpError::InvalidConfig(format!("no competence model for {}", phi.modality)))?;
    model.score(&phi.to_features())
}

/// Fits the competence classifiers from an already-built estimate context.
pub fn train_competence_in(
    ctx: &EstimateContext,
    ncfg: &NeighborhoodConfig,
    tcfg: &TrainConfig,
    opts: &CompetenceOptions,
) -> Result<CompetenceModelSet> {
    ncfg.validate()?;
    let samples = ctx.samples(ncfg, opts)?;
    let dim = opts.feature_len(ncfg.k_v, ncfg.k_p);
    let fitted: Vec<(ModalityId, Result<CompetenceModel>)> = ModalityId::ALL
        .par_iter()
        .map(|&m| {
            let (features, labels): (Vec<Vec<f64>>, Vec<bool>) = samples
                .iter()
                .map(|s| {
                    let s = &s[m.index()];
                    (s.phi.to_features(), s.competent)
                })
                .unzip();
            let positives = labels.iter().filter(|&&l| l).count();
            if positives == 0 || positives == labels.len() {
                let rate = positives as f64 / labels.len() as f64;
                warn!(
                    "{m} base classifier is {} on every estimate record; using constant competence {rate}",
                    if positives == 0 { "wrong" } else { "right" }
                );
                return (m, Ok(CompetenceModel::Constant { rate, dim }));
            }
            if dim == 0 {
                return (
                    m,
                    Err(DmfpError::DimensionMismatch("every competence block is dropped".into())),
                );
            }
            (m, train_logistic(&features, &labels, tcfg).map(|model| CompetenceModel::Logistic { model }))
        })
        .collect();
    let mut models = BTreeMap::new();
    for (m, r) in fitted {
        models.insert(m, r?);
    }
    Ok(CompetenceModelSet {
        models,
        neighborhood: ncfg.clone(),
        options: opts.clone(),
    })
}

/// Builds competence samples over the estimate set (each record against the
/// others) and fits one logistic competence classifier per modality.
pub fn train_competence(
    estimate_set: &LabeledDataset,
    base: &BaseClassifiers,
    ncfg: &NeighborhoodConfig,
    tcfg: &TrainConfig,
    opts: &CompetenceOptions,
) -> Result<CompetenceModelSet> {
    if estimate_set.len() < 2 && !ncfg.include_self {
        return Err(DmfpError::NoNeighbors(format!(
            "estimate set of {} record(s) leaves no neighbors after excluding the target",
            estimate_set.len()
        )));
    }
    let ctx = EstimateContext::build(estimate_set, base)?;
    train_competence_in(&ctx, ncfg, tcfg, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neighbors::NeighborhoodKind;

    fn nb(kind: NeighborhoodKind, ids: &[&str]) -> Neighborhood {
        Neighborhood {
            kind,
            member_ids: ids.iter().map(|s| s.to_string()).collect(),
            similarities: (0..ids.len()).map(|i| 1.0 - i as f64 * 0.01).collect(),
        }
    }

    fn cfg(k_v: usize, k_p: usize) -> NeighborhoodConfig {
        NeighborhoodConfig {
            k_v,
            k_p,
            ..Default::default()
        }
    }

    fn always(correct: bool) -> impl FnMut(&str) -> Result<Evidence> {
        move |_| {
            Ok(Evidence {
                correct,
                gold_posterior: if correct { 0.8 } else { 0.3 },
            })
        }
    }

    #[test]
    fn all_correct_neutral_posterior() {
        let nv = nb(NeighborhoodKind::Visual, &["a", "b", "c"]);
        let np = nb(NeighborhoodKind::Privacy, &["a", "d"]);
        let phi = assemble(
            ModalityId::Object,
            &ProbabilityPair::from_private(0.5),
            Some(&nv),
            Some(&np),
            &cfg(3, 2),
            &CompetenceOptions::default(),
            always(true),
        )
        .unwrap();
        assert_eq!(phi.phi1, vec![1.0; 3]);
        assert_eq!(phi.phi2, vec![1.0; 2]);
        assert_eq!(phi.phi3, Some(0.5));
        assert_eq!(phi.len(), 6);
    }

    #[test]
    fn undersized_neighborhood_is_zero_padded() {
        let nv = nb(NeighborhoodKind::Visual, &["a"]);
        let np = nb(NeighborhoodKind::Privacy, &["a", "b", "c"]);
        let phi = assemble(
            ModalityId::Scene,
            &ProbabilityPair::from_private(0.3),
            Some(&nv),
            Some(&np),
            &cfg(2, 5),
            &CompetenceOptions::default(),
            always(true),
        )
        .unwrap();
        assert_eq!(phi.phi2, vec![1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(phi.privacy_count, 3);
        assert_eq!(phi.len(), 2 + 5 + 1);
        assert!((phi.phi3.unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn empty_neighborhood_errors() {
        let nv = nb(NeighborhoodKind::Visual, &["a"]);
        let np = nb(NeighborhoodKind::Privacy, &[]);
        let r = assemble(
            ModalityId::Scene,
            &ProbabilityPair::from_private(0.3),
            Some(&nv),
            Some(&np),
            &cfg(2, 5),
            &CompetenceOptions::default(),
            always(true),
        );
        assert!(matches!(r, Err(DmfpError::NoNeighbors(_))));
    }

    #[test]
    fn intersection_mode_masks_non_shared_members() {
        let nv = nb(NeighborhoodKind::Visual, &["a", "b", "c"]);
        let np = nb(NeighborhoodKind::Privacy, &["c", "x"]);
        let opts = CompetenceOptions {
            intersection_mode: true,
            ..Default::default()
        };
        let phi = assemble(
            ModalityId::Tag,
            &ProbabilityPair::from_private(0.9),
            Some(&nv),
            Some(&np),
            &cfg(3, 2),
            &opts,
            always(true),
        )
        .unwrap();
        assert_eq!(phi.phi1, vec![0.0, 0.0, 1.0]);
        assert_eq!(phi.phi2, vec![1.0, 0.0]);
        assert_eq!(phi.len(), 6);
    }

    #[test]
    fn dropped_and_zeroed_blocks() {
        let nv = nb(NeighborhoodKind::Visual, &["a", "b"]);
        let np = nb(NeighborhoodKind::Privacy, &["a"]);
        let opts = CompetenceOptions {
            phi1: BlockMode::Zero,
            phi2: BlockMode::Keep,
            use_phi3: false,
            ..Default::default()
        };
        let phi = assemble(
            ModalityId::Tag,
            &ProbabilityPair::from_private(0.9),
            Some(&nv),
            Some(&np),
            &cfg(2, 1),
            &opts,
            always(true),
        )
        .unwrap();
        assert_eq!(phi.to_features(), vec![0.0, 0.0, 1.0]);
        assert_eq!(opts.feature_len(2, 1), 3);
        let drop = CompetenceOptions {
            phi2: BlockMode::Drop,
            ..Default::default()
        };
        assert_eq!(drop.feature_len(7, 5), 8);
    }

    #[test]
    fn probability_features_use_gold_posterior() {
        let nv = nb(NeighborhoodKind::Visual, &["a"]);
        let np = nb(NeighborhoodKind::Privacy, &["a"]);
        let opts = CompetenceOptions {
            probability_features: true,
            ..Default::default()
        };
        let phi = assemble(
            ModalityId::Tag,
            &ProbabilityPair::from_private(0.9),
            Some(&nv),
            Some(&np),
            &cfg(1, 1),
            &opts,
            always(false),
        )
        .unwrap();
        assert_eq!(phi.phi1, vec![0.3]);
    }

    #[test]
    fn accuracies_ignore_padding() {
        let phi = CompetenceVector {
            modality: ModalityId::Object,
            phi1: vec![1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0],
            phi2: vec![1.0, 0.0, 0.0, 0.0],
            phi3: Some(0.67),
            visual_count: 7,
            privacy_count: 2,
        };
        assert!((phi.visual_accuracy() - 5.0 / 7.0).abs() < 1e-15);
        assert_eq!(phi.privacy_accuracy(), 0.5);
        assert!((phi.pooled_accuracy() - 6.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_model_scores_half() {
        let models = CompetenceModelSet {
            models: ModalityId::ALL
                .iter()
                .map(|&m| {
                    (
                        m,
                        CompetenceModel::Logistic {
                            model: LinearModel::zeros(4, crate::linear::LossKind::Logistic),
                        },
                    )
                })
                .collect(),
            neighborhood: cfg(2, 1),
            options: CompetenceOptions::default(),
        };
        let phi = CompetenceVector {
            modality: ModalityId::Scene,
            phi1: vec![1.0, 0.0],
            phi2: vec![1.0],
            phi3: Some(0.8),
            visual_count: 2,
            privacy_count: 1,
        };
        assert_eq!(predict_competence(&models, &phi).unwrap(), 0.5);
        let short = CompetenceVector {
            phi2: vec![],
            ..phi
        };
        assert!(matches!(
            predict_competence(&models, &short),
            Err(DmfpError::LengthMismatch { .. })
        ));
    }
}
