use std::collections::BTreeMap;

use kodama::{linkage, Method};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{concat_modalities, l2_normalize, FeatureRecord, LabeledDataset, PrivacyLabel};
use crate::error::{DmfpError, Result};
use crate::linear::{train_calibrated, CalibratedClassifier, FeatureView, ProbabilityPair, TrainConfig};
use crate::neighbors::{VisualIndex, VisualMetric};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Ward,
    Average,
    Complete,
    Single,
}

impl Linkage {
    fn method(self) -> Method {
        match self {
            Linkage::Ward => Method::Ward,
            Linkage::Average => Method::Average,
            Linkage::Complete => Method::Complete,
            Linkage::Single => Method::Single,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub n_clusters: usize,
    /// Neighbors consulted to route a target to a cluster.
    pub k: usize,
    pub linkage: Linkage,
    pub metric: VisualMetric,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            n_clusters: 5,
            k: 15,
            linkage: Linkage::Ward,
            metric: VisualMetric::Cosine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ClusterModel {
    Calibrated { classifier: CalibratedClassifier },
    /// The cluster held a single class.
    Constant { label: PrivacyLabel },
}

impl ClusterModel {
    fn predict(&self, x: &[f64]) -> Result<ProbabilityPair> {
        match self {
            ClusterModel::Calibrated { classifier } => classifier.predict_proba(x),
            ClusterModel::Constant { label } => Ok(ProbabilityPair::from_private(match label {
                PrivacyLabel::Private => 1.0,
                PrivacyLabel::Public => 0.0,
            })),
        }
    }
}

/// Per-cluster classifiers over a hierarchical clustering of the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEnsemble {
    pub config: ClusterConfig,
    /// L2-normalized concatenated features of the training records.
    pub reference: VisualIndex,
    pub assignment: Vec<usize>,
    pub models: Vec<ClusterModel>,
}

/// Flat cluster labels after merging until `n_clusters` remain. Clusters are
/// numbered by their first member.
pub fn cut_dendrogram(points: &[Vec<f64>], n_clusters: usize, linkage_kind: Linkage) -> Result<Vec<usize>> {
    let n = points.len();
    if n_clusters == 0 || n_clusters > n {
        return Err(DmfpError::InvalidConfig(format!(
            "cannot cut {n} points into {n_clusters} clusters"
        )));
    }
    let mut condensed = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            condensed.push(d.sqrt());
        }
    }
    let mut parent: Vec<usize> = (0..2 * n).collect();
    if n > 1 {
        let dendrogram = linkage(&mut condensed, n, linkage_kind.method());
        for (s, step) in dendrogram.steps().iter().take(n - n_clusters).enumerate() {
            parent[step.cluster1] = n + s;
            parent[step.cluster2] = n + s;
        }
    }
    let root = |mut x: usize| {
        while parent[x] != x {
            x = parent[x];
        }
        x
    };
    let mut numbering = BTreeMap::new();
    Ok((0..n)
        .map(|i| {
            let r = root(i);
            let next = numbering.len();
            *numbering.entry(r).or_insert(next)
        })
        .collect())
}

pub fn train_cluster_ensemble(
    train_set: &LabeledDataset,
    cfg: &ClusterConfig,
    tcfg: &TrainConfig,
) -> Result<ClusterEnsemble> {
    if cfg.k == 0 {
        return Err(DmfpError::InvalidConfig("cluster routing k must be at least 1".into()));
    }
    let labels = train_set.labels()?;
    let raw: Vec<Vec<f64>> = train_set
        .records()
        .iter()
        .map(concat_modalities)
        .collect::<Result<_>>()?;
    let reference: Vec<Vec<f64>> = raw.iter().map(|v| l2_normalize(v)).collect::<Result<_>>()?;
    let assignment = cut_dendrogram(&reference, cfg.n_clusters, cfg.linkage)?;

    let mut models = Vec::with_capacity(cfg.n_clusters);
    for c in 0..cfg.n_clusters {
        let idx: Vec<usize> = (0..raw.len()).filter(|&i| assignment[i] == c).collect();
        let xs: Vec<Vec<f64>> = idx.iter().map(|&i| raw[i].clone()).collect();
        let ys: Vec<PrivacyLabel> = idx.iter().map(|&i| labels[i]).collect();
        let n_private = ys.iter().filter(|l| l.is_private()).count();
        if n_private == 0 || n_private == ys.len() {
            warn!("cluster {c} ({} records) holds only {}; predicting it constantly", ys.len(), ys[0]);
            models.push(ClusterModel::Constant { label: ys[0] });
            continue;
        }
        let classifier = match train_calibrated(&xs, &ys, tcfg, FeatureView::Concat) {
            Err(DmfpError::DegenerateFold { .. }) => {
                warn!("cluster {c} is too small for {}-fold calibration; calibrating in-sample", tcfg.folds);
                let single = TrainConfig {
                    folds: 1,
                    ..tcfg.clone()
                };
                train_calibrated(&xs, &ys, &single, FeatureView::Concat)?
            }
            other => other?,
        };
        models.push(ClusterModel::Calibrated { classifier });
    }
    if models.iter().all(|m| matches!(m, ClusterModel::Constant { .. })) {
        return Err(DmfpError::DegenerateClusters);
    }
    Ok(ClusterEnsemble {
        config: cfg.clone(),
        reference: VisualIndex::from_vectors(train_set.ids().map(str::to_string).collect(), reference)?,
        assignment,
        models,
    })
}

impl ClusterEnsemble {
    /// Cluster chosen by the majority of the target's nearest references;
    /// ties go to the tied cluster holding the nearest neighbor.
    pub fn route(&self, target: &FeatureRecord) -> Result<usize> {
        let query = l2_normalize(&concat_modalities(target)?)?;
        let picked = self
            .reference
            .query_ranked(&query, Some(&target.id), self.config.k, self.config.metric, false)?;
        let clusters: Vec<usize> = picked.iter().map(|&(i, _)| self.assignment[i]).collect();
        Ok(vote_cluster(&clusters, self.models.len()))
    }

    pub fn predict(&self, target: &FeatureRecord) -> Result<(usize, ProbabilityPair)> {
        let c = self.route(target)?;
        Ok((c, self.models[c].predict(&concat_modalities(target)?)?))
    }
}

/// Most frequent cluster among neighbors listed nearest first.
fn vote_cluster(clusters: &[usize], n_clusters: usize) -> usize {
    let mut counts = vec![0usize; n_clusters];
    for &c in clusters {
        counts[c] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0);
    clusters
        .iter()
        .copied()
        .find(|&c| counts[c] == top)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ModalityId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn vote_majority_and_tie() {
        let clusters = [0, 2, 2, 1, 2, 2, 2, 2, 2, 1, 0, 1, 1, 1, 1];
        assert_eq!(vote_cluster(&clusters, 3), 2);
        assert_eq!(vote_cluster(&[1, 0, 0, 1], 2), 1);
    }

    fn blob_records(seed: u64) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut recs = Vec::new();
        for i in 0..80 {
            let blob = i % 2;
            let label = if i % 8 < 4 { PrivacyLabel::Private } else { PrivacyLabel::Public };
            let offset = label.sign() * 0.8;
            let center = if blob == 0 { [5.0, 0.0] } else { [0.0, 5.0] };
            let blocks = ModalityId::ALL
                .iter()
                .map(|&m| {
                    let mut v = vec![center[0] + noise.sample(&mut rng), center[1] + noise.sample(&mut rng)];
                    if m == ModalityId::Tag {
                        v[blob] += offset;
                    }
                    (m, v)
                })
                .collect();
            recs.push(FeatureRecord::new(format!("r{i:03}"), blocks, Some(label)));
        }
        LabeledDataset::from_records(recs).unwrap()
    }

    #[test]
    fn two_blobs_two_clusters() {
        let ds = blob_records(1);
        let cfg = ClusterConfig {
            n_clusters: 2,
            ..ClusterConfig::default()
        };
        let ens = train_cluster_ensemble(&ds, &cfg, &TrainConfig::default()).unwrap();
        for (i, c) in ens.assignment.iter().enumerate() {
            assert_eq!(*c, i % 2, "record {i}");
        }
        let near_a = FeatureRecord::new(
            "q",
            ModalityId::ALL.iter().map(|&m| (m, vec![5.1, 0.1])).collect(),
            None,
        );
        assert_eq!(ens.route(&near_a).unwrap(), 0);
        let near_b = FeatureRecord::new("q", ModalityId::ALL.iter().map(|&m| (m, vec![0.1, 5.0])).collect(), None);
        assert_eq!(ens.route(&near_b).unwrap(), 1);
    }

    #[test]
    fn one_cluster_per_record_is_degenerate() {
        let ds = blob_records(2).subset(&(0..12).collect::<Vec<_>>());
        let cfg = ClusterConfig {
            n_clusters: ds.len(),
            ..ClusterConfig::default()
        };
        assert!(matches!(
            train_cluster_ensemble(&ds, &cfg, &TrainConfig::default()),
            Err(DmfpError::DegenerateClusters)
        ));
    }
}
