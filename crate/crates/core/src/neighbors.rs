//! Exact k-nearest-neighbor regions: the visual neighborhood over the
//! concatenated modality features and the privacy-profile neighborhood over
//! base-classifier posteriors.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::base::BaseClassifiers;
use crate::data::{concat_modalities, FeatureRecord, LabeledDataset};
use crate::error::{DmfpError, Result};
use crate::linear::ProbabilityPair;

pub const PROFILE_LEN: usize = 6;

/// `[obj.private, obj.public, scene.private, scene.public, tag.private, tag.public]`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyProfile(pub [f64; PROFILE_LEN]);

impl PrivacyProfile {
    pub fn from_pairs(pairs: &[ProbabilityPair; 3]) -> Self {
        let mut v = [0.0; PROFILE_LEN];
        for (i, p) in pairs.iter().enumerate() {
            v[2 * i] = p.private;
            v[2 * i + 1] = p.public;
        }
        PrivacyProfile(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Posterior profile of `rec` under the base classifiers.
pub fn privacy_profile(rec: &FeatureRecord, base: &BaseClassifiers) -> Result<PrivacyProfile> {
    Ok(PrivacyProfile::from_pairs(&base.predict(rec)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborhoodKind {
    Visual,
    Privacy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisualMetric {
    Cosine,
    /// Ranked by negated Euclidean distance.
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeighborhoodConfig {
    pub k_v: usize,
    pub k_p: usize,
    pub visual_metric: VisualMetric,
    /// Keep a query's own record when it belongs to the reference set.
    pub include_self: bool,
}

impl Default for NeighborhoodConfig {
    fn default() -> Self {
        NeighborhoodConfig {
            k_v: 900,
            k_p: 100,
            visual_metric: VisualMetric::Cosine,
            include_self: false,
        }
    }
}

impl NeighborhoodConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_v == 0 || self.k_p == 0 {
            return Err(DmfpError::InvalidConfig("k_v and k_p must be at least 1".into()));
        }
        Ok(())
    }
}

/// Members ranked by non-increasing similarity, ties by ascending id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub kind: NeighborhoodKind,
    pub member_ids: Vec<String>,
    pub similarities: Vec<f64>,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.member_ids.iter().any(|m| m == id)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine_from_parts(dot: f64, norm_a: f64, norm_b: f64) -> f64 {
    if norm_a == 0.0 || norm_b == 0.0 {
        0.0
    } else {
        dot / (norm_a * norm_b)
    }
}

/// `a·b / (‖a‖‖b‖)`, or 0 when either vector is zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(DmfpError::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(cosine_from_parts(dot(a, b), norm(a), norm(b)))
}

struct Candidate<'a> {
    similarity: f64,
    id: &'a str,
    index: usize,
}

// "Greater" means ranked worse, so a max-heap keeps the worst kept entry on top.
impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .similarity
            .total_cmp(&self.similarity)
            .then_with(|| self.id.cmp(other.id))
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

/// Bounded selection of the `k` best (index, similarity) pairs, best first.
fn select_top_k<'a>(
    ids: &'a [String],
    k: usize,
    exclude: Option<&str>,
    mut similarity: impl FnMut(usize) -> f64,
) -> Vec<(usize, f64)> {
    let mut heap: BinaryHeap<Candidate<'a>> = BinaryHeap::with_capacity(k + 1);
    for (index, id) in ids.iter().enumerate() {
        if exclude == Some(id.as_str()) {
            continue;
        }
        let cand = Candidate {
            // + 0.0 folds -0.0 into 0.0 so total_cmp ties them.
            similarity: similarity(index) + 0.0,
            id,
            index,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(worst) = heap.peek() {
            if cand < *worst {
                heap.pop();
                heap.push(cand);
            }
        }
    }
    heap.into_sorted_vec()
        .into_iter()
        .map(|c| (c.index, c.similarity))
        .collect()
}

fn to_neighborhood(kind: NeighborhoodKind, ids: &[String], picked: Vec<(usize, f64)>) -> Neighborhood {
    let (member_ids, similarities) = picked
        .into_iter()
        .map(|(i, s)| (ids[i].clone(), s))
        .unzip();
    Neighborhood {
        kind,
        member_ids,
        similarities,
    }
}

/// Precomputed concatenated feature vectors of a reference set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualIndex {
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

impl VisualIndex {
    pub fn build(reference: &LabeledDataset) -> Result<Self> {
        let mut ids = Vec::with_capacity(reference.len());
        let mut vectors = Vec::with_capacity(reference.len());
        for rec in reference.records() {
            ids.push(rec.id.clone());
            vectors.push(concat_modalities(rec)?);
        }
        Self::from_vectors(ids, vectors)
    }

    /// Index over arbitrary equal-length vectors.
    pub fn from_vectors(ids: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != vectors.len() {
            return Err(DmfpError::LengthMismatch {
                expected: ids.len(),
                actual: vectors.len(),
            });
        }
        if let Some(first) = vectors.first() {
            if vectors.iter().any(|v| v.len() != first.len()) {
                return Err(DmfpError::DimensionMismatch("index vectors differ in length".into()));
            }
        }
        let norms = vectors.iter().map(|v| norm(v)).collect();
        Ok(VisualIndex { ids, vectors, norms })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i]
    }

    /// The `k` nearest references to `query` (a concatenated feature vector).
    pub fn query(
        &self,
        query: &[f64],
        query_id: Option<&str>,
        k: usize,
        metric: VisualMetric,
        include_self: bool,
    ) -> Result<Neighborhood> {
        let picked = self.query_ranked(query, query_id, k, metric, include_self)?;
        Ok(to_neighborhood(NeighborhoodKind::Visual, &self.ids, picked))
    }

    /// Like [`VisualIndex::query`], returning (reference position, similarity) pairs.
    pub fn query_ranked(
        &self,
        query: &[f64],
        query_id: Option<&str>,
        k: usize,
        metric: VisualMetric,
        include_self: bool,
    ) -> Result<Vec<(usize, f64)>> {
        if self.is_empty() {
            return Err(DmfpError::NoNeighbors("empty reference set".into()));
        }
        if let Some(v) = self.vectors.first() {
            if v.len() != query.len() {
                return Err(DmfpError::LengthMismatch {
                    expected: v.len(),
                    actual: query.len(),
                });
            }
        }
        let exclude = if include_self { None } else { query_id };
        let picked = match metric {
            VisualMetric::Cosine => {
                let qn = norm(query);
                select_top_k(&self.ids, k, exclude, |i| {
                    cosine_from_parts(dot(query, &self.vectors[i]), qn, self.norms[i])
                })
            }
            VisualMetric::Euclidean => select_top_k(&self.ids, k, exclude, |i| {
                -query
                    .iter()
                    .zip(&self.vectors[i])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            }),
        };
        Ok(picked)
    }
}

/// The `k_v` most visually similar records of `reference` to `query`.
pub fn visual_neighbors(
    query: &FeatureRecord,
    reference: &LabeledDataset,
    cfg: &NeighborhoodConfig,
) -> Result<Neighborhood> {
    if reference.is_empty() {
        return Err(DmfpError::NoNeighbors("empty reference set".into()));
    }
    let index = VisualIndex::build(reference)?;
    index.query(
        &concat_modalities(query)?,
        Some(&query.id),
        cfg.k_v,
        cfg.visual_metric,
        cfg.include_self,
    )
}

/// Privacy profiles of a reference set, in record order.
#[derive(Debug, Clone)]
pub struct ProfileIndex {
    ids: Vec<String>,
    profiles: Vec<PrivacyProfile>,
    norms: Vec<f64>,
}

impl ProfileIndex {
    pub fn new(entries: Vec<(String, PrivacyProfile)>) -> Self {
        let (ids, profiles): (Vec<String>, Vec<PrivacyProfile>) = entries.into_iter().unzip();
        let norms = profiles.iter().map(|p| norm(p.values())).collect();
        ProfileIndex { ids, profiles, norms }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn profile(&self, i: usize) -> &PrivacyProfile {
        &self.profiles[i]
    }

    pub fn query(
        &self,
        query: &PrivacyProfile,
        query_id: Option<&str>,
        k: usize,
        include_self: bool,
    ) -> Result<Neighborhood> {
        if self.is_empty() {
            return Err(DmfpError::NoNeighbors("empty reference profiles".into()));
        }
        let exclude = if include_self { None } else { query_id };
        let qn = norm(query.values());
        let picked = select_top_k(&self.ids, k, exclude, |i| {
            cosine_from_parts(dot(query.values(), self.profiles[i].values()), qn, self.norms[i])
        });
        Ok(to_neighborhood(NeighborhoodKind::Privacy, &self.ids, picked))
    }
}

/// The `k_p` reference profiles most cosine-similar to `query_profile`.
/// `query_id` is excluded from the result unless `cfg.include_self`.
pub fn privacy_neighbors(
    query_profile: &PrivacyProfile,
    query_id: Option<&str>,
    reference_profiles: &[(String, PrivacyProfile)],
    cfg: &NeighborhoodConfig,
) -> Result<Neighborhood> {
    ProfileIndex::new(reference_profiles.to_vec()).query(
        query_profile,
        query_id,
        cfg.k_p,
        cfg.include_self,
    )
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::data::ModalityId;

    fn rec(id: &str, v: [f64; 3]) -> FeatureRecord {
        let blocks = BTreeMap::from([
            (ModalityId::Object, vec![v[0]]),
            (ModalityId::Scene, vec![v[1]]),
            (ModalityId::Tag, vec![v[2]]),
        ]);
        FeatureRecord::new(id, blocks, None)
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        // 32 / (sqrt(14) * sqrt(77))
        let expected = 32.0 / (14.0f64.sqrt() * 77.0f64.sqrt());
        let got = cosine_similarity(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.974631846).abs() < 1e-9);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn visual_clamps_and_ranks_identical_first() {
        let reference = LabeledDataset::from_records(vec![
            rec("a", [1.0, 0.0, 0.0]),
            rec("b", [0.0, 1.0, 0.0]),
            rec("c", [1.0, 1.0, 0.0]),
        ])
        .unwrap();
        let cfg = NeighborhoodConfig {
            k_v: 7,
            ..Default::default()
        };
        let q = rec("q", [0.0, 1.0, 0.0]);
        let nv = visual_neighbors(&q, &reference, &cfg).unwrap();
        assert_eq!(nv.len(), 3);
        assert_eq!(nv.member_ids[0], "b");
        assert!((nv.similarities[0] - 1.0).abs() < 1e-15);
        assert!(nv.similarities.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn self_is_excluded_unless_requested() {
        let reference = LabeledDataset::from_records(vec![
            rec("a", [1.0, 0.0, 0.0]),
            rec("b", [0.0, 1.0, 0.0]),
        ])
        .unwrap();
        let q = reference.records()[0].clone();
        let nv = visual_neighbors(&q, &reference, &NeighborhoodConfig::default()).unwrap();
        assert_eq!(nv.member_ids, vec!["b"]);
        let cfg = NeighborhoodConfig {
            include_self: true,
            ..Default::default()
        };
        let nv = visual_neighbors(&q, &reference, &cfg).unwrap();
        assert_eq!(nv.member_ids, vec!["a", "b"]);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let reference = LabeledDataset::from_records(vec![
            rec("z", [1.0, 0.0, 0.0]),
            rec("m", [2.0, 0.0, 0.0]),
            rec("a", [3.0, 0.0, 0.0]),
        ])
        .unwrap();
        let cfg = NeighborhoodConfig {
            k_v: 2,
            ..Default::default()
        };
        let nv = visual_neighbors(&rec("q", [1.0, 0.0, 0.0]), &reference, &cfg).unwrap();
        assert_eq!(nv.member_ids, vec!["a", "m"]);
    }

    #[test]
    fn euclidean_metric_ranks_by_distance() {
        let reference = LabeledDataset::from_records(vec![
            rec("far", [10.0, 0.0, 0.0]),
            rec("near", [1.0, 0.1, 0.0]),
        ])
        .unwrap();
        let cfg = NeighborhoodConfig {
            visual_metric: VisualMetric::Euclidean,
            ..Default::default()
        };
        let nv = visual_neighbors(&rec("q", [1.0, 0.0, 0.0]), &reference, &cfg).unwrap();
        assert_eq!(nv.member_ids, vec!["near", "far"]);
        assert!((nv.similarities[0] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn empty_reference_errors() {
        let empty = LabeledDataset::new(vec![], BTreeMap::new()).unwrap();
        assert!(matches!(
            visual_neighbors(&rec("q", [1.0, 0.0, 0.0]), &empty, &NeighborhoodConfig::default()),
            Err(DmfpError::NoNeighbors(_))
        ));
    }

    #[test]
    fn privacy_orthogonal_profiles_rank_last() {
        let p = |v: [f64; 6]| PrivacyProfile(v);
        let refs = vec![
            ("orth".to_string(), p([0.0, 1.0, 0.0, 1.0, 0.0, 1.0])),
            ("same".to_string(), p([1.0, 0.0, 1.0, 0.0, 1.0, 0.0])),
            ("half".to_string(), p([0.5; 6])),
        ];
        let q = p([1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let np = privacy_neighbors(&q, None, &refs, &NeighborhoodConfig::default()).unwrap();
        assert_eq!(np.member_ids, vec!["same", "half", "orth"]);
        assert!((np.similarities[0] - 1.0).abs() < 1e-15);
        assert_eq!(np.similarities[2], 0.0);
        assert_eq!(np.kind, NeighborhoodKind::Privacy);
    }

    #[test]
    fn profile_layout() {
        let pairs = [
            ProbabilityPair::from_private(0.62),
            ProbabilityPair::from_private(0.5),
            ProbabilityPair::from_private(0.29),
        ];
        let prof = PrivacyProfile::from_pairs(&pairs);
        let expected = [0.62, 0.38, 0.5, 0.5, 0.29, 0.71];
        for (a, b) in prof.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
