//! Synthetic multi-modal data whose modality competence depends on region.
//!
//! Every record belongs to one region. Each region has its own Gaussian
//! center in every modality block, so the visual neighborhood recovers
//! regions, but only the region's informative block carries the label: it
//! is offset along a region-specific direction, with the noise along that
//! direction bounded so the region is linearly separable in that block.
//! With probability `noise` a record's informative block encodes the
//! flipped label.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{apportion, write_dataset, FeatureRecord, LabeledDataset, ModalityId, PrivacyLabel};
use crate::error::{DmfpError, Result};
use crate::eval::{exploratory_analysis, ExploratoryTable, AT_LEAST_ONE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n: usize,
    /// Block width per modality, object, scene, tag.
    pub dims: [usize; 3],
    pub n_regions: usize,
    /// Informative modality of each region; empty means object, scene, tag in turn.
    pub informative: Vec<ModalityId>,
    pub noise: f64,
    pub class_ratio: f64,
    pub seed: u64,
    /// Distance between region centers, in noise standard deviations.
    pub center_spacing: f64,
    /// Offset of each class from the center along the label direction.
    pub label_offset: f64,
    /// Half-width of the uniform noise along the label direction; must stay
    /// below `label_offset` for separability.
    pub margin_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 3000,
            dims: [8, 8, 8],
            n_regions: 3,
            informative: Vec::new(),
            noise: 0.1,
            class_ratio: 0.25,
            seed: 0,
            center_spacing: 4.0,
            label_offset: 2.0,
            margin_noise: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.dims.iter().any(|&d| d < 2) {
            problems.push(format!("every block needs at least 2 dimensions, got {:?}", self.dims));
        }
        if self.n_regions == 0 {
            problems.push("n_regions must be at least 1".to_string());
        }
        if self.n < 10 * self.n_regions {
            problems.push(format!(
                "n = {} is below 10 records per region ({} regions)",
                self.n, self.n_regions
            ));
        }
        if !self.informative.is_empty() && self.informative.len() != self.n_regions {
            problems.push(format!(
                "{} informative modalities given for {} regions",
                self.informative.len(),
                self.n_regions
            ));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            problems.push(format!("noise must lie in [0, 1], got {}", self.noise));
        }
        if !(self.class_ratio > 0.0 && self.class_ratio < 1.0) {
            problems.push(format!("class_ratio must lie in (0, 1), got {}", self.class_ratio));
        }
        if !(self.center_spacing > 0.0) {
            problems.push("center_spacing must be positive".to_string());
        }
        if !(self.margin_noise >= 0.0 && self.margin_noise < self.label_offset) {
            problems.push(format!(
                "need 0 <= margin_noise < label_offset, got {} and {}",
                self.margin_noise, self.label_offset
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(DmfpError::InvalidConfig(problems.join("; ")))
        }
    }

    pub fn informative_of(&self, region: usize) -> ModalityId {
        self.informative
            .get(region)
            .copied()
            .unwrap_or(ModalityId::ALL[region % 3])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordTruth {
    pub id: String,
    pub region: usize,
    pub informative: ModalityId,
    pub corrupted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSidecar {
    pub config: SynthConfig,
    pub records: Vec<RecordTruth>,
}

impl SynthSidecar {
    pub fn truth(&self, id: &str) -> Option<&RecordTruth> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn by_id(&self) -> BTreeMap<&str, &RecordTruth> {
        self.records.iter().map(|r| (r.id.as_str(), r)).collect()
    }
}

/// Center of `region` in a block of width `dim`: a signed axis scaled so
/// centers on distinct axes sit `spacing` apart.
fn center(region: usize, dim: usize, spacing: f64) -> Vec<f64> {
    let mut c = vec![0.0; dim];
    let axis = region % dim;
    let sign = if (region / dim) % 2 == 0 { 1.0 } else { -1.0 };
    c[axis] = sign * spacing / std::f64::consts::SQRT_2;
    c
}

/// Random unit vector orthogonal to the axes used by region centers
/// (when the block is wide enough to leave any free).
fn label_direction(dim: usize, n_regions: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let used = n_regions.min(dim);
    loop {
        let mut w: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        if used < dim {
            for x in w.iter_mut().take(used) {
                *x = 0.0;
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return w.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Deterministic dataset and ground-truth sidecar for `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<(LabeledDataset, SynthSidecar)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let bounded = Uniform::new_inclusive(-cfg.margin_noise, cfg.margin_noise)
        .map_err(|e| DmfpError::InvalidConfig(e.to_string()))?;

    let directions: Vec<Vec<f64>> = (0..cfg.n_regions)
        .map(|r| label_direction(cfg.dims[cfg.informative_of(r).index()], cfg.n_regions, &mut rng))
        .collect();

    // Balanced regions, and the private share apportioned within each.
    let region_sizes = apportion(cfg.n, &vec![1.0 / cfg.n_regions as f64; cfg.n_regions]);
    let mut slots: Vec<(usize, PrivacyLabel)> = Vec::with_capacity(cfg.n);
    for (r, &size) in region_sizes.iter().enumerate() {
        let n_private = (cfg.class_ratio * size as f64).round() as usize;
        slots.extend((0..size).map(|i| {
            let label = if i < n_private { PrivacyLabel::Private } else { PrivacyLabel::Public };
            (r, label)
        }));
    }
    slots.shuffle(&mut rng);

    let width = cfg.n.to_string().len().max(5);
    let mut records = Vec::with_capacity(cfg.n);
    let mut truths = Vec::with_capacity(cfg.n);
    for (i, &(region, label)) in slots.iter().enumerate() {
        let informative = cfg.informative_of(region);
        let corrupted = rng.random::<f64>() < cfg.noise;
        let encoded = if corrupted { label.other() } else { label };
        let mut blocks = BTreeMap::new();
        for m in ModalityId::ALL {
            let dim = cfg.dims[m.index()];
            let mut x: Vec<f64> = center(region, dim, cfg.center_spacing)
                .into_iter()
                .map(|c| c + normal.sample(&mut rng))
                .collect();
            if m == informative {
                let w = &directions[region];
                let c = center(region, dim, cfg.center_spacing);
                let along: f64 = x.iter().zip(&c).zip(w).map(|((xi, ci), wi)| (xi - ci) * wi).sum();
                let target = encoded.sign() * cfg.label_offset + bounded.sample(&mut rng);
                for (xi, wi) in x.iter_mut().zip(w) {
                    *xi += (target - along) * wi;
                }
            }
            blocks.insert(m, x);
        }
        let id = format!("s{i:0width$}");
        truths.push(RecordTruth {
            id: id.clone(),
            region,
            informative,
            corrupted,
        });
        records.push(FeatureRecord {
            id,
            blocks,
            label: Some(label),
        });
    }
    let ds = LabeledDataset::from_records(records)?;
    Ok((
        ds,
        SynthSidecar {
            config: cfg.clone(),
            records: truths,
        },
    ))
}

/// Writes the dataset in the manifest/CSV format plus `truth.json`.
pub fn write_synthetic(ds: &LabeledDataset, sidecar: &SynthSidecar, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let manifest = write_dataset(ds, dir)?;
    let path = dir.join("truth.json");
    let json = serde_json::to_string_pretty(sidecar).map_err(|e| DmfpError::parse("sidecar", e))?;
    std::fs::write(&path, json).map_err(|e| DmfpError::io(&path, e))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRates {
    pub region: usize,
    pub informative: ModalityId,
    pub size: usize,
    /// Percent correct per modality, object, scene, tag.
    pub modality_accuracy: [f64; 3],
    pub at_least_one: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub overall: ExploratoryTable,
    pub regions: Vec<RegionRates>,
    pub best_single: f64,
    pub at_least_one: f64,
    /// `at_least_one - best_single`, in accuracy points.
    pub headroom: f64,
}

/// At-least-one-correct ceiling and per-modality rates of the given
/// per-modality predictions, overall and per region.
pub fn oracle_report(
    ds: &LabeledDataset,
    sidecar: &SynthSidecar,
    per_modality: &[Vec<PrivacyLabel>; 3],
) -> Result<OracleReport> {
    let golds = ds.labels()?;
    let named: Vec<(String, Vec<PrivacyLabel>)> = ModalityId::ALL
        .iter()
        .map(|m| (m.to_string(), per_modality[m.index()].clone()))
        .collect();
    let overall = exploratory_analysis(&named, &golds)?;
    let truth = sidecar.by_id();
    let mut regions = Vec::new();
    for r in 0..sidecar.config.n_regions {
        let idx: Vec<usize> = ds
            .records()
            .iter()
            .enumerate()
            .filter(|(_, rec)| truth.get(rec.id.as_str()).is_some_and(|t| t.region == r))
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let pct = |hit: &dyn Fn(usize) -> bool| {
            100.0 * idx.iter().filter(|&&i| hit(i)).count() as f64 / idx.len() as f64
        };
        regions.push(RegionRates {
            region: r,
            informative: sidecar.config.informative_of(r),
            size: idx.len(),
            modality_accuracy: [0, 1, 2].map(|m| pct(&|i| per_modality[m][i] == golds[i])),
            at_least_one: pct(&|i| (0..3).any(|m| per_modality[m][i] == golds[i])),
        });
    }
    let best_single = ModalityId::ALL
        .iter()
        .map(|m| overall.row(m.as_str()).expect("modality row").overall)
        .fold(f64::MIN, f64::max);
    let at_least_one = overall.row(AT_LEAST_ONE).expect("aggregate row").overall;
    Ok(OracleReport {
        overall,
        regions,
        best_single,
        at_least_one,
        headroom: at_least_one - best_single,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::{train_calibrated, FeatureView, TrainConfig};

    fn small(noise: f64) -> SynthConfig {
        SynthConfig {
            n: 600,
            noise,
            seed: 7,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn bit_identical_and_balanced() {
        let (a, sa) = generate(&small(0.1)).unwrap();
        let (b, sb) = generate(&small(0.1)).unwrap();
        assert_eq!(a.records(), b.records());
        assert_eq!(sa, sb);
        assert_eq!(a.len(), 600);
        let (p, u) = a.class_counts();
        assert_eq!((p, u), (150, 450));
        for r in 0..3 {
            assert_eq!(sa.records.iter().filter(|t| t.region == r).count(), 200);
        }
        let corrupted = sa.records.iter().filter(|t| t.corrupted).count();
        assert!((30..=90).contains(&corrupted), "{corrupted}");
    }

    #[test]
    fn noiseless_regions_are_separable_in_their_informative_block() {
        let cfg = small(0.0);
        let (ds, side) = generate(&cfg).unwrap();
        for r in 0..cfg.n_regions {
            let m = cfg.informative_of(r);
            let c = center(r, cfg.dims[m.index()], cfg.center_spacing);
            let recs: Vec<&FeatureRecord> = ds
                .records()
                .iter()
                .filter(|rec| side.truth(&rec.id).unwrap().region == r)
                .collect();
            // The generating direction itself is a perfect linear probe.
            let xs: Vec<Vec<f64>> = recs
                .iter()
                .map(|rec| rec.block(m).unwrap().iter().zip(&c).map(|(x, c)| x - c).collect())
                .collect();
            let ys: Vec<PrivacyLabel> = recs.iter().map(|r| r.gold().unwrap()).collect();
            let clf = train_calibrated(&xs, &ys, &TrainConfig::default(), FeatureView::Concat).unwrap();
            let correct = xs
                .iter()
                .zip(&ys)
                .filter(|(x, y)| clf.predict_proba(x).unwrap().label() == **y)
                .count();
            assert!(correct as f64 / xs.len() as f64 >= 0.99, "region {r}: {correct}/{}", xs.len());
        }
    }

    #[test]
    fn rejects_infeasible_configs() {
        for cfg in [
            SynthConfig { dims: [1, 8, 8], ..SynthConfig::default() },
            SynthConfig { n: 20, ..SynthConfig::default() },
            SynthConfig { noise: 1.5, ..SynthConfig::default() },
            SynthConfig { informative: vec![ModalityId::Tag], ..SynthConfig::default() },
            SynthConfig { margin_noise: 3.0, ..SynthConfig::default() },
        ] {
            assert!(matches!(generate(&cfg), Err(DmfpError::InvalidConfig(_))));
        }
    }

    #[test]
    fn perfect_predictions_give_full_ceiling() {
        let (ds, side) = generate(&small(0.0)).unwrap();
        let golds = ds.labels().unwrap();
        let r = oracle_report(&ds, &side, &[golds.clone(), golds.clone(), golds]).unwrap();
        assert_eq!(r.at_least_one, 100.0);
        assert_eq!(r.headroom, 0.0);
        assert_eq!(r.regions.len(), 3);
    }

    #[test]
    fn writes_manifest_and_sidecar() {
        let (ds, side) = generate(&small(0.1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_synthetic(&ds, &side, dir.path()).unwrap();
        let back = crate::data::load_dataset(&manifest).unwrap();
        assert_eq!(back.records(), ds.records());
        let truth: SynthSidecar =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("truth.json")).unwrap()).unwrap();
        assert_eq!(truth, side);
    }
}
