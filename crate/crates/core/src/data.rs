//! Domain types, dataset manifests, feature ingestion and splitting.
//!
//! A dataset on disk is a JSON manifest plus one CSV per modality
//! (`id,f0,..,f{d-1}`) and an optional `id,label` CSV. Paths inside the
//! manifest are resolved relative to the manifest's directory.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{DmfpError, Result};

/// Gold or predicted privacy class of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PrivacyLabel {
    Private,
    Public,
}

impl PrivacyLabel {
    pub const ALL: [PrivacyLabel; 2] = [PrivacyLabel::Private, PrivacyLabel::Public];

    pub fn as_str(self) -> &'static str {
        match self {
            PrivacyLabel::Private => "private",
            PrivacyLabel::Public => "public",
        }
    }

    pub fn other(self) -> PrivacyLabel {
        match self {
            PrivacyLabel::Private => PrivacyLabel::Public,
            PrivacyLabel::Public => PrivacyLabel::Private,
        }
    }

    pub fn is_private(self) -> bool {
        self == PrivacyLabel::Private
    }

    /// +1 for private, -1 for public (the sign convention of the linear models).
    pub fn sign(self) -> f64 {
        if self.is_private() {
            1.0
        } else {
            -1.0
        }
    }
}

impl fmt::Display for PrivacyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PrivacyLabel {
    type Err = DmfpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "private" => Ok(PrivacyLabel::Private),
            "public" => Ok(PrivacyLabel::Public),
            _ => Err(DmfpError::UnknownLabel(s.to_string())),
        }
    }
}

impl Serialize for PrivacyLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for PrivacyLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One information channel of an image. The derived ordering
/// (object < scene < tag) fixes the layout of concatenations and profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityId {
    Object,
    Scene,
    Tag,
}

impl ModalityId {
    pub const ALL: [ModalityId; 3] = [ModalityId::Object, ModalityId::Scene, ModalityId::Tag];

    pub fn as_str(self) -> &'static str {
        match self {
            ModalityId::Object => "object",
            ModalityId::Scene => "scene",
            ModalityId::Tag => "tag",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ModalityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModalityId {
    type Err = DmfpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "object" => Ok(ModalityId::Object),
            "scene" => Ok(ModalityId::Scene),
            "tag" | "tags" => Ok(ModalityId::Tag),
            other => Err(DmfpError::parse("modality", format!("unknown modality `{other}`"))),
        }
    }
}

/// One image: its per-modality feature blocks and (optionally) its gold label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub id: String,
    pub blocks: BTreeMap<ModalityId, Vec<f64>>,
    pub label: Option<PrivacyLabel>,
}

impl FeatureRecord {
    pub fn new(
        id: impl Into<String>,
        blocks: BTreeMap<ModalityId, Vec<f64>>,
        label: Option<PrivacyLabel>,
    ) -> Self {
        FeatureRecord {
            id: id.into(),
            blocks,
            label,
        }
    }

    pub fn block(&self, modality: ModalityId) -> Result<&[f64]> {
        self.blocks
            .get(&modality)
            .map(Vec::as_slice)
            .ok_or_else(|| DmfpError::MissingBlock {
                id: self.id.clone(),
                modality,
            })
    }

    pub fn gold(&self) -> Result<PrivacyLabel> {
        self.label.ok_or_else(|| DmfpError::Unlabeled(self.id.clone()))
    }
}

/// An ordered collection of records sharing per-modality dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    records: Vec<FeatureRecord>,
    dims: BTreeMap<ModalityId, usize>,
    index: HashMap<String, usize>,
}

impl LabeledDataset {
    /// Builds a dataset with explicit dimensions, validating every record.
    pub fn new(records: Vec<FeatureRecord>, dims: BTreeMap<ModalityId, usize>) -> Result<Self> {
        if dims.values().any(|&d| d == 0) {
            return Err(DmfpError::DimensionMismatch(
                "modality dimensions must be positive".into(),
            ));
        }
        let mut index = HashMap::with_capacity(records.len());
        for (pos, rec) in records.iter().enumerate() {
            if index.insert(rec.id.clone(), pos).is_some() {
                return Err(DmfpError::DuplicateId(rec.id.clone()));
            }
            if rec.blocks.len() != dims.len() {
                return Err(DmfpError::DimensionMismatch(format!(
                    "record `{}` has {} blocks, dataset has {}",
                    rec.id,
                    rec.blocks.len(),
                    dims.len()
                )));
            }
            for (&m, &d) in &dims {
                let block = rec.block(m)?;
                if block.len() != d {
                    return Err(DmfpError::DimensionMismatch(format!(
                        "record `{}` {m} block has length {}, expected {d}",
                        rec.id,
                        block.len()
                    )));
                }
                if block.iter().any(|v| !v.is_finite()) {
                    return Err(DmfpError::NonFinite(format!("record `{}` {m} block", rec.id)));
                }
            }
        }
        Ok(LabeledDataset {
            records,
            dims,
            index,
        })
    }

    /// Builds a dataset whose dimensions are taken from the first record.
    pub fn from_records(records: Vec<FeatureRecord>) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| DmfpError::Empty("dataset has no records".into()))?;
        let dims = first.blocks.iter().map(|(&m, b)| (m, b.len())).collect();
        Self::new(records, dims)
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dims(&self) -> &BTreeMap<ModalityId, usize> {
        &self.dims
    }

    pub fn dim(&self, modality: ModalityId) -> Option<usize> {
        self.dims.get(&modality).copied()
    }

    pub fn get(&self, id: &str) -> Option<&FeatureRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Gold labels in record order; errors on the first unlabeled record.
    pub fn labels(&self) -> Result<Vec<PrivacyLabel>> {
        self.records.iter().map(FeatureRecord::gold).collect()
    }

    /// (private, public) counts among labeled records.
    pub fn class_counts(&self) -> (usize, usize) {
        self.records.iter().fold((0, 0), |(p, q), r| match r.label {
            Some(PrivacyLabel::Private) => (p + 1, q),
            Some(PrivacyLabel::Public) => (p, q + 1),
            None => (p, q),
        })
    }

    /// New dataset holding the records at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let records: Vec<FeatureRecord> = indices.iter().map(|&i| self.records[i].clone()).collect();
        let index = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();
        LabeledDataset {
            records,
            dims: self.dims.clone(),
            index,
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }
}

/// Concatenates the object, scene and tag blocks, in that order.
pub fn concat_modalities(rec: &FeatureRecord) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for m in ModalityId::ALL {
        out.extend_from_slice(rec.block(m)?);
    }
    Ok(out)
}

/// Scales `v` to unit L2 norm; the zero vector maps to itself.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(DmfpError::NonFinite("vector to normalize".into()));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(v.to_vec());
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub seed: u64,
    /// (train, estimate, test) fractions.
    pub fractions: [f64; 3],
    pub stratified: bool,
}

fn default_true() -> bool {
    true
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            seed: 0,
            fractions: [15.0 / 32.0, 10.0 / 32.0, 7.0 / 32.0],
            stratified: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in ["train", "estimate", "test"].iter().zip(self.fractions) {
            if !f.is_finite() || !(0.0..=1.0).contains(&f) {
                return Err(DmfpError::InvalidSplit(format!(
                    "{name} fraction {f} outside [0, 1]"
                )));
            }
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DmfpError::InvalidSplit(format!(
                "fractions sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: LabeledDataset,
    pub estimate: LabeledDataset,
    pub test: LabeledDataset,
}

/// Apportions `total` items across `fractions` by the largest-remainder rule.
/// Ties on the remainder go to the earlier slot.
pub(crate) fn apportion(total: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &slot in order.iter().take(total.saturating_sub(assigned)) {
        sizes[slot] += 1;
    }
    sizes
}

/// Splits a labeled dataset into disjoint train/estimate/test sets.
///
/// Split sizes follow the fractions by largest remainder. In stratified
/// mode the private records are apportioned across splits the same way
/// and public records fill the rest, so every split's private count is
/// within one record of its proportional share. Each split keeps the
/// input's record order.
pub fn split_dataset(ds: &LabeledDataset, spec: &SplitSpec) -> Result<DatasetSplit> {
    spec.validate()?;
    let labels = ds.labels()?;
    let n = ds.len();
    let sizes = apportion(n, &spec.fractions);
    for (name, &size) in ["train", "estimate", "test"].iter().zip(&sizes) {
        if size == 0 {
            return Err(DmfpError::InvalidSplit(format!(
                "{name} split would be empty ({n} records, fractions {:?})",
                spec.fractions
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut buckets: [Vec<usize>; 3] = Default::default();
    if spec.stratified {
        let mut private: Vec<usize> = (0..n).filter(|&i| labels[i].is_private()).collect();
        let mut public: Vec<usize> = (0..n).filter(|&i| !labels[i].is_private()).collect();
        private.shuffle(&mut rng);
        public.shuffle(&mut rng);
        let private_sizes = apportion(private.len(), &spec.fractions);
        let (mut p, mut q) = (private.into_iter(), public.into_iter());
        for s in 0..3 {
            let np = private_sizes[s].min(sizes[s]);
            buckets[s].extend(p.by_ref().take(np));
            buckets[s].extend(q.by_ref().take(sizes[s] - np));
        }
        // Any leftovers (only possible when a class is too small) go to train.
        buckets[0].extend(p);
        buckets[0].extend(q);
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        let mut it = all.into_iter();
        for s in 0..3 {
            buckets[s].extend(it.by_ref().take(sizes[s]));
        }
    }
    for b in &mut buckets {
        b.sort_unstable();
    }
    let [train, estimate, test] = buckets;
    Ok(DatasetSplit {
        train: ds.subset(&train),
        estimate: ds.subset(&estimate),
        test: ds.subset(&test),
    })
}

// ---------------------------------------------------------------------------
// Manifest I/O
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestModality {
    pub name: ModalityId,
    pub file: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub modalities: Vec<ManifestModality>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_file: Option<String>,
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn read_feature_csv(path: &Path, dim: usize) -> Result<Vec<(String, Vec<f64>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.len() != dim + 1 {
        return Err(DmfpError::DimensionMismatch(format!(
            "{} has {} feature columns, manifest says {dim}",
            path.display(),
            headers.len().saturating_sub(1)
        )));
    }
    let mut rows = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        if row.len() != dim + 1 {
            return Err(DmfpError::DimensionMismatch(format!(
                "{} row {} has {} feature columns, expected {dim}",
                path.display(),
                line + 1,
                row.len().saturating_sub(1)
            )));
        }
        let id = row[0].to_string();
        let mut values = Vec::with_capacity(dim);
        for field in row.iter().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| {
                DmfpError::parse(
                    path.display().to_string(),
                    format!("row `{id}`: `{field}` is not a number"),
                )
            })?;
            if !v.is_finite() {
                return Err(DmfpError::NonFinite(format!("{} row `{id}`", path.display())));
            }
            values.push(v);
        }
        rows.push((id, values));
    }
    Ok(rows)
}

fn csv_error(path: &Path, e: csv::Error) -> DmfpError {
    if let csv::ErrorKind::Io(_) = e.kind() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => DmfpError::io(path, io),
            _ => unreachable!(),
        }
    } else {
        DmfpError::parse(path.display().to_string(), e)
    }
}

fn read_labels_csv(path: &Path) -> Result<Vec<(String, Option<PrivacyLabel>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        if row.len() != 2 {
            return Err(DmfpError::parse(
                path.display().to_string(),
                "label rows must have exactly two columns (id,label)",
            ));
        }
        let label = match row[1].trim() {
            "" => None,
            s => Some(s.parse()?),
        };
        out.push((row[0].to_string(), label));
    }
    Ok(out)
}

/// Loads a dataset from a JSON manifest.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| DmfpError::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| DmfpError::parse(manifest_path.display().to_string(), e))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    load_from_manifest(&manifest, base)
}

pub fn load_from_manifest(manifest: &Manifest, base: &Path) -> Result<LabeledDataset> {
    if manifest.modalities.is_empty() {
        return Err(DmfpError::parse("manifest", "no modalities listed"));
    }
    let mut dims = BTreeMap::new();
    let mut columns: Vec<(ModalityId, Vec<(String, Vec<f64>)>)> = Vec::new();
    for entry in &manifest.modalities {
        if dims.insert(entry.name, entry.dim).is_some() {
            return Err(DmfpError::parse(
                "manifest",
                format!("modality {} listed twice", entry.name),
            ));
        }
        let path = base.join(&entry.file);
        columns.push((entry.name, read_feature_csv(&path, entry.dim)?));
    }

    let (_, first) = &columns[0];
    let n = first.len();
    for (m, rows) in &columns[1..] {
        if rows.len() != n {
            return Err(DmfpError::DimensionMismatch(format!(
                "{m} file has {} rows, {} file has {n}",
                rows.len(),
                columns[0].0
            )));
        }
        for (i, ((a, _), (b, _))) in first.iter().zip(rows).enumerate() {
            if a != b {
                return Err(DmfpError::DimensionMismatch(format!(
                    "row {}: id `{b}` in {m} file does not match `{a}`",
                    i + 1
                )));
            }
        }
    }

    let mut labels: HashMap<String, Option<PrivacyLabel>> = HashMap::new();
    if let Some(file) = &manifest.labels_file {
        let path = base.join(file);
        for (id, label) in read_labels_csv(&path)? {
            if labels.insert(id.clone(), label).is_some() {
                return Err(DmfpError::DuplicateId(id));
            }
        }
    }

    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let id = first[i].0.clone();
        let mut blocks = BTreeMap::new();
        for (m, rows) in &columns {
            let v = if manifest.normalize {
                l2_normalize(&rows[i].1)?
            } else {
                rows[i].1.clone()
            };
            blocks.insert(*m, v);
        }
        let label = labels.remove(&id).flatten();
        records.push(FeatureRecord::new(id, blocks, label));
    }
    if let Some(stray) = labels.keys().min() {
        return Err(DmfpError::UnknownRecord(format!(
            "{stray} (listed in labels file but absent from feature files)"
        )));
    }
    LabeledDataset::new(records, dims)
}

/// Writes `ds` as `manifest.json`, one `<modality>.csv` per modality and
/// `labels.csv` into `dir`. Values are written in shortest round-trip
/// decimal form and the manifest disables load-time normalization, so
/// reloading reproduces the records exactly.
pub fn write_dataset(ds: &LabeledDataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| DmfpError::io(dir, e))?;
    let mut modalities = Vec::new();
    for (&m, &dim) in ds.dims() {
        let file = format!("{m}.csv");
        let path = dir.join(&file);
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        let mut header = vec!["id".to_string()];
        header.extend((0..dim).map(|i| format!("f{i}")));
        w.write_record(&header).map_err(|e| csv_error(&path, e))?;
        for rec in ds.records() {
            let mut row = vec![rec.id.clone()];
            row.extend(rec.block(m)?.iter().map(|v| format!("{v:?}")));
            w.write_record(&row).map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| DmfpError::io(&path, e))?;
        modalities.push(ManifestModality {
            name: m,
            file,
            dim,
        });
    }
    let labels_path = dir.join("labels.csv");
    let mut w = csv::Writer::from_path(&labels_path).map_err(|e| csv_error(&labels_path, e))?;
    w.write_record(["id", "label"])
        .map_err(|e| csv_error(&labels_path, e))?;
    for rec in ds.records() {
        let label = rec.label.map(|l| l.as_str()).unwrap_or("");
        w.write_record([rec.id.as_str(), label])
            .map_err(|e| csv_error(&labels_path, e))?;
    }
    w.flush().map_err(|e| DmfpError::io(&labels_path, e))?;

    let manifest = Manifest {
        modalities,
        labels_file: Some("labels.csv".into()),
        normalize: false,
    };
    let manifest_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text + "\n").map_err(|e| DmfpError::io(&manifest_path, e))?;
    Ok(manifest_path)
}
