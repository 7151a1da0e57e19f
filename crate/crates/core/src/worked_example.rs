//! A twelve-record hand-built scenario with three competence scores
//! (0.97, 0.08, 0.99) where the object and tag classifiers are selected and
//! outvote the scene classifier: Private 1.96 vs Public 0.
//!
//! Every block is two-dimensional: `[signal, position]`. Each base
//! classifier reads only the signal coordinate (`P(private) = σ(1000·signal)`),
//! while the position coordinates dominate cosine similarity, so the visual
//! neighborhood order is fixed by angle and the correctness pattern by the
//! signals.

use serde::{Deserialize, Serialize};

use crate::base::BaseClassifiers;
use crate::competence::{
    CompetenceModel, CompetenceModelSet, CompetenceOptions, CompetenceVector, EstimateContext,
};
use crate::data::{FeatureRecord, LabeledDataset, ModalityId, PrivacyLabel};
use crate::error::Result;
use crate::fusion::{decide, dmfp_predict, FixedScorer, FusionConfig, FusionDecision};
use crate::linear::{
    logit, CalibratedClassifier, CalibratedFold, FeatureView, LinearModel, LossKind,
    PlattSigmoid, ProbabilityPair, TrainConfig,
};
use crate::neighbors::{NeighborhoodConfig, PrivacyProfile};

pub const K_V: usize = 7;
pub const K_P: usize = 5;
pub const SCORES: [f64; 3] = [0.97, 0.08, 0.99];
/// Target posteriors P(private): object, scene, tag.
pub const TARGET_PRIVATE: [f64; 3] = [0.67, 0.42, 0.99];
pub const PHI1: [[u8; K_V]; 3] = [
    [1, 1, 0, 1, 0, 1, 1],
    [1, 0, 1, 1, 1, 1, 1],
    [0, 0, 0, 1, 0, 1, 1],
];
pub const PHI2: [[u8; K_P]; 3] = [[1, 1, 1, 1, 1], [0, 0, 0, 0, 0], [1, 1, 1, 1, 1]];
/// Example privacy profile layout.
pub const EXAMPLE_PROFILE: [f64; 6] = [0.62, 0.38, 0.5, 0.5, 0.29, 0.71];

const SIGNAL_SCALE: f64 = 1000.0;

#[derive(Debug, Clone)]
pub struct WorkedExample {
    pub base: BaseClassifiers,
    pub estimate: LabeledDataset,
    pub target: FeatureRecord,
    pub competence: CompetenceModelSet,
    pub fusion: FusionConfig,
}

fn record(id: &str, logits: [f64; 3], position: [f64; 3], label: Option<PrivacyLabel>) -> FeatureRecord {
    let blocks = ModalityId::ALL
        .iter()
        .map(|&m| (m, vec![logits[m.index()] / SIGNAL_SCALE, position[m.index()]]))
        .collect();
    FeatureRecord {
        id: id.to_string(),
        blocks,
        label,
    }
}

fn signal_classifier(m: ModalityId) -> CalibratedClassifier {
    CalibratedClassifier {
        view: FeatureView::Modality(m),
        dim: 2,
        folds: vec![CalibratedFold {
            model: LinearModel {
                weights: vec![SIGNAL_SCALE, 0.0],
                bias: 0.0,
                loss_kind: LossKind::Hinge,
            },
            sigmoid: PlattSigmoid { a: -1.0, b: 0.0 },
        }],
        config: TrainConfig {
            folds: 1,
            ..TrainConfig::default()
        },
    }
}

impl WorkedExample {
    pub fn build() -> Result<Self> {
        let base = BaseClassifiers::new(ModalityId::ALL.map(signal_classifier))?;
        let target_logits = TARGET_PRIVATE.map(logit);
        let target = record("target", target_logits, [1.0, 0.0, 0.0], None);

        let mut records = Vec::new();
        // Visual neighbors: all private, at increasing angle from the target.
        for j in 0..K_V {
            let theta = 0.1 * (j + 1) as f64;
            let logits = [0, 1, 2].map(|m| if PHI1[m][j] == 1 { 2.0 } else { -2.0 });
            records.push(record(
                &format!("v{}", j + 1),
                logits,
                [theta.cos(), theta.sin(), 0.0],
                Some(PrivacyLabel::Private),
            ));
        }
        // Profile neighbors: the target's own posteriors, visually far away.
        for i in 0..K_P {
            let theta = 1.2 + 0.05 * i as f64;
            records.push(record(
                &format!("p{}", i + 1),
                target_logits,
                [theta.cos(), 0.0, theta.sin()],
                Some(PrivacyLabel::Private),
            ));
        }
        let estimate = LabeledDataset::from_records(records)?;

        let ncfg = NeighborhoodConfig {
            k_v: K_V,
            k_p: K_P,
            ..NeighborhoodConfig::default()
        };
        let dim = K_V + K_P + 1;
        let competence = CompetenceModelSet {
            models: ModalityId::ALL
                .iter()
                .map(|&m| {
                    let mut model = LinearModel::zeros(dim, LossKind::Logistic);
                    model.bias = logit(SCORES[m.index()]);
                    (m, CompetenceModel::Logistic { model })
                })
                .collect(),
            neighborhood: ncfg.clone(),
            options: CompetenceOptions::default(),
        };
        Ok(WorkedExample {
            base,
            estimate,
            target,
            competence,
            fusion: FusionConfig {
                ncfg,
                ..FusionConfig::default()
            },
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkedExampleReport {
    pub posteriors: [ProbabilityPair; 3],
    pub profile: PrivacyProfile,
    pub vectors: [CompetenceVector; 3],
    pub decision: FusionDecision,
    /// Decision recomputed with the scores injected directly.
    pub injected: FusionDecision,
}

pub fn run_worked_example() -> Result<WorkedExampleReport> {
    let ex = WorkedExample::build()?;
    let ctx = EstimateContext::build(&ex.estimate, &ex.base)?;
    let posteriors = ex.base.predict(&ex.target)?;
    let tc = ctx.target_competence(&ex.target, &posteriors, &ex.fusion.ncfg, &ex.competence.options)?;
    let decision = dmfp_predict(&ex.target, &ctx, &ex.base, &ex.competence, &ex.fusion)?;
    let labels = posteriors.map(|p| p.label());
    let stub = FixedScorer(SCORES);
    let injected = decide(&posteriors, &labels, stub.0, &ex.fusion)?;
    Ok(WorkedExampleReport {
        posteriors,
        profile: tc.profile,
        vectors: tc.vectors,
        decision,
        injected,
    })
}

/// Weight printed with at most two decimals and no trailing zeros.
pub fn format_weight(x: f64) -> String {
    let s = format!("{x:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn bits(v: &[f64]) -> String {
    let inner: Vec<String> = v.iter().map(|x| format_weight(*x)).collect();
    format!("[{}]", inner.join(","))
}

impl WorkedExampleReport {
    pub fn render(&self) -> String {
        let d = &self.decision;
        let mut out = String::new();
        out.push_str(&format!("k_v = {K_V}, k_p = {K_P}\n"));
        out.push_str(&format!(
            "privacy profile: [{}]\n\n",
            self.profile.values().iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(", ")
        ));
        let rows: Vec<[String; 7]> = self
            .vectors
            .iter()
            .map(|phi| {
                let m = phi.modality;
                let score = d.competence.map(|c| c[m.index()]).unwrap_or(f64::NAN);
                let selected = d.selected.iter().any(|s| s.modality == m);
                [
                    m.to_string(),
                    self.posteriors[m.index()].label().to_string(),
                    bits(&phi.phi1),
                    bits(&phi.phi2),
                    format!("{:.2}", phi.phi3.unwrap_or(f64::NAN)),
                    format!("{score:.2}"),
                    if selected { "yes" } else { "no" }.to_string(),
                ]
            })
            .collect();
        let header = ["modality", "label", "phi1", "phi2", "phi3", "CS", "selected"];
        let widths: Vec<usize> = (0..header.len())
            .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: Vec<&str>| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        out.push_str(&line(header.to_vec()));
        out.push('\n');
        for r in &rows {
            out.push_str(&line(r.iter().map(String::as_str).collect()));
            out.push('\n');
        }
        let t = d.tallies.expect("voted decision has tallies");
        out.push_str(&format!(
            "\nPrivate: {}, Public: {} → {}\n",
            format_weight(t.private),
            format_weight(t.public),
            capitalized(d.label)
        ));
        out
    }
}

fn capitalized(label: PrivacyLabel) -> &'static str {
    match label {
        PrivacyLabel::Private => "Private",
        PrivacyLabel::Public => "Public",
    }
}
