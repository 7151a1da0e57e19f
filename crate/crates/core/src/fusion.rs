//! Per-target fusion: agreement check, competence gating and a
//! competence-weighted vote among the classifiers deemed competent.

use serde::{Deserialize, Serialize};

use crate::base::BaseClassifiers;
use crate::competence::{
    predict_competence, BlockMode, CompetenceModelSet, CompetenceOptions, CompetenceVector,
    EstimateContext,
};
use crate::data::{FeatureRecord, ModalityId, PrivacyLabel};
use crate::error::{DmfpError, Result};
use crate::linear::ProbabilityPair;
use crate::neighbors::NeighborhoodConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Use the single classifier with the highest competence score.
    #[default]
    HighestCompetence,
    /// Vote with all three classifiers weighted by their scores.
    WeightedAll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub threshold: f64,
    pub fallback: Fallback,
    pub ncfg: NeighborhoodConfig,
    /// Estimate competence even when the base classifiers agree.
    pub literal_agreement: bool,
    /// Label assigned to an exact 0.5 posterior.
    pub half_posterior_label: PrivacyLabel,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            threshold: 0.5,
            fallback: Fallback::HighestCompetence,
            ncfg: NeighborhoodConfig::default(),
            literal_agreement: false,
            half_posterior_label: PrivacyLabel::Public,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(DmfpError::InvalidConfig(format!(
                "fusion threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        self.ncfg.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionPath {
    Unanimous,
    Voted,
    Fallback,
    TieBrokenByPosterior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tallies {
    pub private: f64,
    pub public: f64,
}

impl Tallies {
    pub fn of(&self, label: PrivacyLabel) -> f64 {
        match label {
            PrivacyLabel::Private => self.private,
            PrivacyLabel::Public => self.public,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectedVote {
    pub modality: ModalityId,
    /// Absent on the unanimous path, where competence is never estimated.
    pub competence: Option<f64>,
    pub label: PrivacyLabel,
    pub posterior: ProbabilityPair,
}

/// Outcome for one target. On the unanimous path `competence` and
/// `tallies` are absent; on every other path both are present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionDecision {
    pub label: PrivacyLabel,
    pub path: DecisionPath,
    pub selected: Vec<SelectedVote>,
    pub tallies: Option<Tallies>,
    /// Competence score of every base classifier, object, scene, tag.
    pub competence: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vote {
    pub label: PrivacyLabel,
    pub weight: f64,
    pub posterior: ProbabilityPair,
}

/// Argmax label of each base classifier and whether all three agree.
pub fn base_agreement(
    base: &BaseClassifiers,
    target: &FeatureRecord,
) -> Result<([PrivacyLabel; 3], bool)> {
    let pairs = base.predict(target)?;
    Ok(agreement(&pairs, PrivacyLabel::Public))
}

fn agreement(pairs: &[ProbabilityPair; 3], tie: PrivacyLabel) -> ([PrivacyLabel; 3], bool) {
    let labels = pairs.map(|p| p.label_with_tie(tie));
    (labels, labels.iter().all(|&l| l == labels[0]))
}

/// Label with the larger summed weight; an exact tie goes to the vote with
/// the largest maximum posterior (earliest such vote if several).
pub fn weighted_majority_vote(votes: &[Vote]) -> Result<(PrivacyLabel, DecisionPath, Tallies)> {
    if votes.is_empty() {
        return Err(DmfpError::Empty("vote list".into()));
    }
    let mut tallies = Tallies {
        private: 0.0,
        public: 0.0,
    };
    for v in votes {
        if !(v.weight >= 0.0) {
            return Err(DmfpError::InvalidConfig(format!("vote weight {} is negative", v.weight)));
        }
        match v.label {
            PrivacyLabel::Private => tallies.private += v.weight,
            PrivacyLabel::Public => tallies.public += v.weight,
        }
    }
    if tallies.private > tallies.public {
        Ok((PrivacyLabel::Private, DecisionPath::Voted, tallies))
    } else if tallies.public > tallies.private {
        Ok((PrivacyLabel::Public, DecisionPath::Voted, tallies))
    } else {
        let best = votes
            .iter()
            .fold(&votes[0], |best, v| if v.posterior.max() > best.posterior.max() { v } else { best });
        Ok((best.label, DecisionPath::TieBrokenByPosterior, tallies))
    }
}

/// Scores how likely a base classifier is to be right on the target.
pub trait CompetenceScorer: Sync {
    fn score(&self, phi: &CompetenceVector) -> Result<f64>;
}

impl CompetenceScorer for CompetenceModelSet {
    fn score(&self, phi: &CompetenceVector) -> Result<f64> {
        predict_competence(self, phi)
    }
}

/// Fixed score per modality, for fixtures and equivalence checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedScorer(pub [f64; 3]);

impl CompetenceScorer for FixedScorer {
    fn score(&self, phi: &CompetenceVector) -> Result<f64> {
        Ok(self.0[phi.modality.index()])
    }
}

/// Competence as the plain fraction of correctly classified neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FractionScorer {
    Visual,
    Privacy,
    Pooled,
}

impl CompetenceScorer for FractionScorer {
    fn score(&self, phi: &CompetenceVector) -> Result<f64> {
        Ok(match self {
            FractionScorer::Visual => phi.visual_accuracy(),
            FractionScorer::Privacy => phi.privacy_accuracy(),
            FractionScorer::Pooled => phi.pooled_accuracy(),
        })
    }
}

/// Fusion for a target whose base posteriors are already known.
pub fn fuse(
    target: &FeatureRecord,
    pairs: &[ProbabilityPair; 3],
    ctx: &EstimateContext,
    scorer: &dyn CompetenceScorer,
    opts: &CompetenceOptions,
    cfg: &FusionConfig,
) -> Result<FusionDecision> {
    let (labels, unanimous) = agreement(pairs, cfg.half_posterior_label);
    if unanimous && !cfg.literal_agreement {
        return Ok(FusionDecision {
            label: labels[0],
            path: DecisionPath::Unanimous,
            selected: ModalityId::ALL
                .iter()
                .map(|&m| SelectedVote {
                    modality: m,
                    competence: None,
                    label: labels[m.index()],
                    posterior: pairs[m.index()],
                })
                .collect(),
            tallies: None,
            competence: None,
        });
    }
    if ctx.is_empty() {
        return Err(DmfpError::Empty("estimate set".into()));
    }
    let tc = ctx.target_competence(target, pairs, &cfg.ncfg, opts)?;
    let mut scores = [0.0; 3];
    for phi in &tc.vectors {
        scores[phi.modality.index()] = scorer.score(phi)?;
    }
    decide(pairs, &labels, scores, cfg)
}

/// Gating, voting and fallback given the three competence scores.
pub fn decide(
    pairs: &[ProbabilityPair; 3],
    labels: &[PrivacyLabel; 3],
    scores: [f64; 3],
    cfg: &FusionConfig,
) -> Result<FusionDecision> {
    let vote_of = |m: ModalityId| SelectedVote {
        modality: m,
        competence: Some(scores[m.index()]),
        label: labels[m.index()],
        posterior: pairs[m.index()],
    };
    let competent: Vec<SelectedVote> = ModalityId::ALL
        .iter()
        .filter(|m| scores[m.index()] > cfg.threshold)
        .map(|&m| vote_of(m))
        .collect();
    let (selected, fallback) = if competent.is_empty() {
        let chosen = match cfg.fallback {
            Fallback::WeightedAll => ModalityId::ALL.iter().map(|&m| vote_of(m)).collect(),
            Fallback::HighestCompetence => {
                let best = ModalityId::ALL
                    .into_iter()
                    .reduce(|a, b| {
                        let (sa, sb) = (scores[a.index()], scores[b.index()]);
                        if sb > sa || (sb == sa && pairs[b.index()].max() > pairs[a.index()].max()) {
                            b
                        } else {
                            a
                        }
                    })
                    .expect("three modalities");
                vec![vote_of(best)]
            }
        };
        (chosen, true)
    } else {
        (competent, false)
    };
    let votes: Vec<Vote> = selected
        .iter()
        .map(|s| Vote {
            label: s.label,
            weight: s.competence.unwrap_or(0.0),
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

/// Full DMFP prediction for one target.
pub fn dmfp_predict(
    target: &FeatureRecord,
    ctx: &EstimateContext,
    base: &BaseClassifiers,
    cmodels: &CompetenceModelSet,
    cfg: &FusionConfig,
) -> Result<FusionDecision> {
    if cmodels.neighborhood != cfg.ncfg {
        return Err(DmfpError::InvalidConfig(
            "competence models were trained with a different neighborhood configuration".into(),
        ));
    }
    let pairs = base.predict(target)?;
    fuse(target, &pairs, ctx, cmodels, &cmodels.options, cfg)
}

/// Component-removal variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "DMFP")]
    Full,
    NoNV,
    NoNP,
    NoPhi1,
    NoPhi2,
    NoPhi3,
    #[serde(rename = "NV_CL")]
    NvCl,
    #[serde(rename = "NP_CL")]
    NpCl,
    #[serde(rename = "Both_CL")]
    BothCl,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Full,
        Variant::NoNV,
        Variant::NoNP,
        Variant::NoPhi1,
        Variant::NoPhi2,
        Variant::NoPhi3,
        Variant::NvCl,
        Variant::NpCl,
        Variant::BothCl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "DMFP",
            Variant::NoNV => "NoNV",
            Variant::NoNP => "NoNP",
            Variant::NoPhi1 => "NoPhi1",
            Variant::NoPhi2 => "NoPhi2",
            Variant::NoPhi3 => "NoPhi3",
            Variant::NvCl => "NV_CL",
            Variant::NpCl => "NP_CL",
            Variant::BothCl => "Both_CL",
        }
    }

    /// Feature layout of the variant, derived from `base` (the full model's options).
    pub fn options(self, base: &CompetenceOptions) -> CompetenceOptions {
        let mut o = base.clone();
        match self {
            Variant::Full | Variant::NvCl | Variant::NpCl | Variant::BothCl => {}
            Variant::NoNV => o.phi1 = BlockMode::Zero,
            Variant::NoNP => o.phi2 = BlockMode::Zero,
            Variant::NoPhi1 => o.phi1 = BlockMode::Drop,
            Variant::NoPhi2 => o.phi2 = BlockMode::Drop,
            Variant::NoPhi3 => o.use_phi3 = false,
        }
        o
    }

    /// Counting scorer for the variants that learn no competence classifier.
    pub fn fraction_scorer(self) -> Option<FractionScorer> {
        match self {
            Variant::NvCl => Some(FractionScorer::Visual),
            Variant::NpCl => Some(FractionScorer::Privacy),
            Variant::BothCl => Some(FractionScorer::Pooled),
            _ => None,
        }
    }

    pub fn needs_competence_models(self) -> bool {
        self.fraction_scorer().is_none()
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = DmfpError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                DmfpError::parse(
                    "variant",
                    format!(
                        "unknown variant {s:?}; expected one of {}",
                        Variant::ALL.map(Variant::as_str).join(", ")
                    ),
                )
            })
    }
}

/// Prediction under an ablation variant. `cmodels` must have been trained
/// with `variant.options(..)` unless the variant is a counting one, in which
/// case it is only consulted for its neighborhood configuration.
pub fn ablation_predict(
    variant: Variant,
    target: &FeatureRecord,
    ctx: &EstimateContext,
    base: &BaseClassifiers,
    cmodels: &CompetenceModelSet,
    cfg: &FusionConfig,
) -> Result<FusionDecision> {
    match variant.fraction_scorer() {
        None => dmfp_predict(target, ctx, base, cmodels, cfg),
        Some(scorer) => {
            let pairs = base.predict(target)?;
            let opts = CompetenceOptions {
                phi1: BlockMode::Keep,
                phi2: BlockMode::Keep,
                ..cmodels.options.clone()
            };
            fuse(target, &pairs, ctx, &scorer, &opts, cfg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use PrivacyLabel::{Private, Public};

    fn pair(p: f64) -> ProbabilityPair {
        ProbabilityPair::from_private(p)
    }

    fn vote(label: PrivacyLabel, weight: f64, p: f64) -> Vote {
        Vote {
            label,
            weight,
            posterior: pair(p),
        }
    }

    #[test]
    fn agreement_examples() {
        let (labels, u) = agreement(&[pair(0.8), pair(0.6), pair(0.9)], Public);
        assert_eq!(labels, [Private; 3]);
        assert!(u);
        assert!(!agreement(&[pair(0.8), pair(0.4), pair(0.9)], Public).1);
        assert_eq!(agreement(&[pair(0.5), pair(0.2), pair(0.1)], Public).0[0], Public);
        assert_eq!(agreement(&[pair(0.5), pair(0.2), pair(0.1)], Private).0[0], Private);
    }

    #[test]
    fn worked_example_tallies() {
        let (label, path, t) =
            weighted_majority_vote(&[vote(Private, 0.97, 0.67), vote(Private, 0.99, 0.99)]).unwrap();
        assert_eq!(label, Private);
        assert_eq!(path, DecisionPath::Voted);
        assert!((t.private - 1.96).abs() < 1e-12);
        assert_eq!(t.public, 0.0);
    }

    #[test]
    fn tie_goes_to_largest_posterior() {
        let (label, path, _) =
            weighted_majority_vote(&[vote(Private, 0.6, 0.7), vote(Public, 0.6, 0.45)]).unwrap();
        assert_eq!(label, Private);
        assert_eq!(path, DecisionPath::TieBrokenByPosterior);
        let (label, _, _) =
            weighted_majority_vote(&[vote(Private, 0.6, 0.7), vote(Public, 0.6, 0.1)]).unwrap();
        assert_eq!(label, Public);
    }

    #[test]
    fn empty_and_negative_votes_rejected() {
        assert!(matches!(weighted_majority_vote(&[]), Err(DmfpError::Empty(_))));
        assert!(weighted_majority_vote(&[vote(Private, -0.1, 0.7)]).is_err());
    }

    #[test]
    fn fallback_policies() {
        let pairs = [pair(0.8), pair(0.3), pair(0.45)];
        let labels = pairs.map(|p| p.label());
        let cfg = FusionConfig::default();
        let d = decide(&pairs, &labels, [0.2, 0.4, 0.1], &cfg).unwrap();
        assert_eq!(d.path, DecisionPath::Fallback);
        assert_eq!(d.label, Public);
        assert_eq!(d.selected.len(), 1);
        assert_eq!(d.selected[0].modality, ModalityId::Scene);

        let all = FusionConfig {
            fallback: Fallback::WeightedAll,
            ..FusionConfig::default()
        };
        let d = decide(&pairs, &labels, [0.45, 0.3, 0.1], &all).unwrap();
        assert_eq!(d.path, DecisionPath::Fallback);
        assert_eq!(d.selected.len(), 3);
        assert_eq!(d.label, Private);
    }

    #[test]
    fn gate_is_strict() {
        let pairs = [pair(0.8), pair(0.3), pair(0.45)];
        let labels = pairs.map(|p| p.label());
        let d = decide(&pairs, &labels, [0.5, 0.51, 0.52], &FusionConfig::default()).unwrap();
        assert_eq!(d.path, DecisionPath::Voted);
        assert_eq!(d.selected.len(), 2);
        assert_eq!(d.label, Public);
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.as_str()));
        }
        assert!("NoPhi4".parse::<Variant>().is_err());
    }

    #[test]
    fn threshold_validation() {
        for t in [0.0, 1.0, f64::NAN] {
            let cfg = FusionConfig {
                threshold: t,
                ..FusionConfig::default()
            };
            assert!(cfg.validate().is_err());
        }
    }
}
