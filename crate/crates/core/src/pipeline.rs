//! End-to-end training, persistence, evaluation and the (k_v, k_p) sweep.

use std::path::Path;
use std::sync::Arc;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base::BaseClassifiers;
use crate::baselines::{Baseline, BaselineConfig, BaselineKind, BaselineModels, Prediction, Predictor};
use crate::competence::{train_competence_in, CompetenceModelSet, CompetenceOptions, EstimateContext};
use crate::data::{load_dataset, split_dataset, write_dataset, FeatureRecord, LabeledDataset, ModalityId, PrivacyLabel, SplitSpec};
use crate::error::{DmfpError, Result};
use crate::eval::{
    confusion_metrics, error_correction, exploratory_analysis, ErrorCorrectionTable, EvalReport,
    ExploratoryTable, MultiSeedSummary, SweepGrid,
};
use crate::fusion::{ablation_predict, FusionConfig, Variant};
use crate::linear::TrainConfig;
use crate::neighbors::NeighborhoodConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub split: SplitSpec,
    /// Base classifiers and trained baselines.
    pub train: TrainConfig,
    pub competence_train: TrainConfig,
    pub competence: CompetenceOptions,
    pub fusion: FusionConfig,
    pub baselines: BaselineConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            split: SplitSpec::default(),
            train: TrainConfig::default(),
            competence_train: TrainConfig::default(),
            competence: CompetenceOptions::default(),
            fusion: FusionConfig::default(),
            baselines: BaselineConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.train.validate()?;
        self.competence_train.validate()?;
        self.fusion.validate()
    }

    /// The same configuration with every seed replaced by `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.split.seed = seed;
        c.train.seed = seed;
        c.competence_train.seed = seed;
        c
    }
}

/// Which systems to train and evaluate besides full DMFP.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Systems {
    pub variants: Vec<Variant>,
    pub baselines: Vec<BaselineKind>,
}

impl Systems {
    fn all_variants(&self) -> Vec<Variant> {
        let mut v = vec![Variant::Full];
        for &x in &self.variants {
            if !v.contains(&x) {
                v.push(x);
            }
        }
        v
    }
}

/// Everything persisted after training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub base: BaseClassifiers,
    pub fusion: FusionConfig,
    /// Competence models per variant; counting variants carry no models.
    pub competence: Vec<(Variant, CompetenceModelSet)>,
    pub baseline_kinds: Vec<BaselineKind>,
    pub baselines: BaselineModels,
}

const BASE_FILE: &str = "base.json";
const COMPETENCE_FILE: &str = "competence.json";
const BASELINES_FILE: &str = "baselines.json";
const FUSION_FILE: &str = "fusion.json";
const ESTIMATE_DIR: &str = "estimate";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| DmfpError::parse(path.display().to_string(), e))?;
    std::fs::write(path, text + "\n").map_err(|e| DmfpError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| DmfpError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DmfpError::parse(path.display().to_string(), e))
}

/// A trained system ready to predict: the bundle plus the estimate set it
/// measures competence against.
#[derive(Debug, Clone)]
pub struct TrainedPipeline {
    pub bundle: ModelBundle,
    pub ctx: Arc<EstimateContext>,
}

impl TrainedPipeline {
    pub fn train(
        train_set: &LabeledDataset,
        estimate_set: &LabeledDataset,
        cfg: &PipelineConfig,
        systems: &Systems,
    ) -> Result<Self> {
        cfg.validate()?;
        let ncfg = &cfg.fusion.ncfg;
        if estimate_set.len() < 2 && !ncfg.include_self {
            return Err(DmfpError::NoNeighbors(format!(
                "estimate set of {} record(s) leaves no neighbors after excluding the target",
                estimate_set.len()
            )));
        }
        info!("training base classifiers on {} records", train_set.len());
        let base = BaseClassifiers::train(train_set, &cfg.train)?;
        let ctx = Arc::new(EstimateContext::build(estimate_set, &base)?);
        let mut competence = Vec::new();
        for variant in systems.all_variants() {
            let opts = variant.options(&cfg.competence);
            let set = if variant.needs_competence_models() {
                info!("training {variant} competence models on {} records", estimate_set.len());
                train_competence_in(&ctx, ncfg, &cfg.competence_train, &opts)?
            } else {
                CompetenceModelSet {
                    models: Default::default(),
                    neighborhood: ncfg.clone(),
                    options: opts,
                }
            };
            competence.push((variant, set));
        }
        let baselines = BaselineModels::train(
            &systems.baselines,
            train_set,
            estimate_set,
            &base,
            &cfg.train,
            &cfg.baselines,
        )?;
        Ok(TrainedPipeline {
            bundle: ModelBundle {
                base,
                fusion: cfg.fusion.clone(),
                competence,
                baseline_kinds: systems.baselines.clone(),
                baselines,
            },
            ctx,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| DmfpError::io(dir, e))?;
        write_json(&dir.join(BASE_FILE), &self.bundle.base)?;
        write_json(&dir.join(FUSION_FILE), &self.bundle.fusion)?;
        write_json(&dir.join(COMPETENCE_FILE), &self.bundle.competence)?;
        write_json(
            &dir.join(BASELINES_FILE),
            &(&self.bundle.baseline_kinds, &self.bundle.baselines),
        )?;
        write_dataset(self.ctx.dataset(), dir.join(ESTIMATE_DIR))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let base: BaseClassifiers = read_json(&dir.join(BASE_FILE))?;
        let (baseline_kinds, baselines): (Vec<BaselineKind>, BaselineModels) =
            read_json(&dir.join(BASELINES_FILE))?;
        let bundle = ModelBundle {
            fusion: read_json(&dir.join(FUSION_FILE))?,
            competence: read_json(&dir.join(COMPETENCE_FILE))?,
            baseline_kinds,
            baselines,
            base,
        };
        let estimate = load_dataset(dir.join(ESTIMATE_DIR).join("manifest.json"))?;
        let ctx = Arc::new(EstimateContext::build(&estimate, &bundle.base)?);
        Ok(TrainedPipeline { bundle, ctx })
    }

    pub fn variant(&self, v: Variant) -> Result<DmfpPredictor<'_>> {
        let (_, cmodels) = self
            .bundle
            .competence
            .iter()
            .find(|(x, _)| *x == v)
            .ok_or_else(|| DmfpError::InvalidConfig(format!("variant {v} was not trained")))?;
        Ok(DmfpPredictor {
            variant: v,
            base: &self.bundle.base,
            cmodels,
            fusion: &self.bundle.fusion,
            ctx: &self.ctx,
        })
    }

    pub fn baseline(&self, kind: BaselineKind) -> Result<Baseline<'_>> {
        Baseline::new(kind, &self.bundle.base, &self.bundle.baselines)
    }

    /// DMFP variants first (full model leading), then baselines, in
    /// training order.
    pub fn predictors(&self) -> Result<Vec<Box<dyn Predictor + '_>>> {
        let mut out: Vec<Box<dyn Predictor + '_>> = Vec::new();
        for (v, _) in &self.bundle.competence {
            out.push(Box::new(self.variant(*v)?));
        }
        for &k in &self.bundle.baseline_kinds {
            out.push(Box::new(self.baseline(k)?));
        }
        Ok(out)
    }
}

/// DMFP (or one of its ablations) bound to trained models.
pub struct DmfpPredictor<'a> {
    pub variant: Variant,
    pub base: &'a BaseClassifiers,
    pub cmodels: &'a CompetenceModelSet,
    pub fusion: &'a FusionConfig,
    pub ctx: &'a EstimateContext,
}

impl DmfpPredictor<'_> {
    pub fn decide(&self, target: &FeatureRecord) -> Result<crate::fusion::FusionDecision> {
        ablation_predict(self.variant, target, self.ctx, self.base, self.cmodels, self.fusion)
    }
}

impl Predictor for DmfpPredictor<'_> {
    fn name(&self) -> String {
        self.variant.as_str().to_string()
    }

    fn predict(&self, target: &FeatureRecord) -> Result<Prediction> {
        Ok(Prediction::from_decision(&target.id, self.variant.as_str(), self.decide(target)?))
    }
}

/// Predictions for every record, in record order.
pub fn predict_all(p: &dyn Predictor, ds: &LabeledDataset) -> Result<Vec<Prediction>> {
    ds.records().par_iter().map(|r| p.predict(r)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemResult {
    pub report: EvalReport,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evaluation {
    pub systems: Vec<SystemResult>,
    /// Base-classifier agreement on the evaluated records.
    pub exploratory: ExploratoryTable,
    /// Errors of each base classifier corrected by each DMFP variant.
    pub corrections: Vec<ErrorCorrectionTable>,
}

impl Evaluation {
    pub fn report(&self, system: &str) -> Option<&EvalReport> {
        self.systems.iter().find(|s| s.report.meta.system == system).map(|s| &s.report)
    }

    pub fn reports(&self) -> Vec<EvalReport> {
        self.systems.iter().map(|s| s.report.clone()).collect()
    }
}

/// Runs every trained system over `test_set` and tabulates the results.
pub fn evaluate(pipeline: &TrainedPipeline, test_set: &LabeledDataset) -> Result<Evaluation> {
    let golds = test_set.labels()?;
    let base_preds: Vec<(String, Vec<PrivacyLabel>)> = ModalityId::ALL
        .iter()
        .map(|&m| {
            let clf = pipeline.bundle.base.get(m);
            let labels = test_set
                .records()
                .par_iter()
                .map(|r| clf.predict_record(r).map(|p| p.label()))
                .collect::<Result<Vec<_>>>()?;
            Ok((m.to_string(), labels))
        })
        .collect::<Result<_>>()?;
    let exploratory = exploratory_analysis(&base_preds, &golds)?;

    let mut systems = Vec::new();
    let mut corrections = Vec::new();
    for p in pipeline.predictors()? {
        let predictions = predict_all(p.as_ref(), test_set)?;
        let labels: Vec<PrivacyLabel> = predictions.iter().map(|x| x.label).collect();
        let mut report = confusion_metrics(&labels, &golds)?;
        report.meta.system = p.name();
        report.meta.seed = Some(pipeline.bundle.base.get(ModalityId::Object).config.seed);
        if p.name().parse::<Variant>().is_ok() {
            corrections.push(error_correction(&base_preds, &p.name(), &labels, &golds)?);
        }
        systems.push(SystemResult { report, predictions });
    }
    Ok(Evaluation {
        systems,
        exploratory,
        corrections,
    })
}

/// Split, train and evaluate once.
pub fn run_experiment(ds: &LabeledDataset, cfg: &PipelineConfig, systems: &Systems) -> Result<Evaluation> {
    let split = split_dataset(ds, &cfg.split)?;
    let pipeline = TrainedPipeline::train(&split.train, &split.estimate, cfg, systems)?;
    evaluate(&pipeline, &split.test)
}

/// One experiment per seed (fresh split and training), summarized per system.
pub fn multi_seed_run(
    ds: &LabeledDataset,
    cfg: &PipelineConfig,
    systems: &Systems,
    seeds: &[u64],
) -> Result<Vec<MultiSeedSummary>> {
    if seeds.is_empty() {
        return Err(DmfpError::Empty("seed list".into()));
    }
    let runs: Vec<Evaluation> = seeds
        .iter()
        .map(|&s| run_experiment(ds, &cfg.with_seed(s), systems))
        .collect::<Result<_>>()?;
    let names: Vec<String> = runs[0].systems.iter().map(|s| s.report.meta.system.clone()).collect();
    names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let reports = runs.iter().map(|r| r.systems[k].report.clone()).collect();
            MultiSeedSummary::from_reports(name, reports)
        })
        .collect()
}

/// Stratified fold labels over `labels` (class-wise shuffle, dealt round-robin).
fn cv_folds(labels: &[PrivacyLabel], folds: usize, seed: u64) -> Vec<usize> {
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

/// Private-class F1 of full DMFP for each (k_v, k_p) cell, from
/// `folds`-fold cross-validation inside the estimate set: competence models
/// are trained on the other folds and scored on the held-out one, with the
/// out-of-fold predictions pooled per cell.
pub fn sweep(
    estimate_set: &LabeledDataset,
    base: &BaseClassifiers,
    k_v: &[usize],
    k_p: &[usize],
    cfg: &PipelineConfig,
    folds: usize,
) -> Result<SweepGrid> {
    if k_v.is_empty() || k_p.is_empty() {
        return Err(DmfpError::InvalidConfig("sweep grid needs at least one k_v and one k_p".into()));
    }
    if folds < 2 {
        return Err(DmfpError::InvalidConfig("sweep needs at least 2 folds".into()));
    }
    let golds = estimate_set.labels()?;
    let assignment = cv_folds(&golds, folds, cfg.split.seed);
    let parts: Vec<(LabeledDataset, LabeledDataset)> = (0..folds)
        .map(|f| {
            let (held, rest): (Vec<usize>, Vec<usize>) = (0..golds.len()).partition(|&i| assignment[i] == f);
            (estimate_set.subset(&rest), estimate_set.subset(&held))
        })
        .collect();
    let contexts: Vec<EstimateContext> = parts
        .iter()
        .map(|(inner, _)| EstimateContext::build(inner, base))
        .collect::<Result<_>>()?;

    let cells: Vec<(usize, usize)> = (0..k_v.len()).flat_map(|i| (0..k_p.len()).map(move |j| (i, j))).collect();
    let scores: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| {
            let ncfg = NeighborhoodConfig {
                k_v: k_v[i],
                k_p: k_p[j],
                ..cfg.fusion.ncfg.clone()
            };
            let fusion = FusionConfig {
                ncfg: ncfg.clone(),
                ..cfg.fusion.clone()
            };
            let mut preds = Vec::with_capacity(golds.len());
            let mut truth = Vec::with_capacity(golds.len());
            for ((_, held), ctx) in parts.iter().zip(&contexts) {
                let cmodels = train_competence_in(ctx, &ncfg, &cfg.competence_train, &cfg.competence)?;
                let p = DmfpPredictor {
                    variant: Variant::Full,
                    base,
                    cmodels: &cmodels,
                    fusion: &fusion,
                    ctx,
                };
                for rec in held.records() {
                    preds.push(p.decide(rec)?.label);
                    truth.push(rec.gold()?);
                }
            }
            Ok(confusion_metrics(&preds, &truth)?.private.f1)
        })
        .collect::<Result<_>>()?;
    let f1 = (0..k_v.len())
        .map(|i| scores[i * k_p.len()..(i + 1) * k_p.len()].to_vec())
        .collect();
    Ok(SweepGrid {
        k_v: k_v.to_vec(),
        k_p: k_p.to_vec(),
        f1,
    })
}
