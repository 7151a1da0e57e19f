//! Python bindings: datasets, synthetic data, training, prediction,
//! evaluation and the worked example. Structured results come back as
//! plain dicts and lists.

use std::collections::BTreeMap;
use std::path::PathBuf;

use dmfp_core::baselines::{majority_vote_predict, BaselineKind, Predictor};
use dmfp_core::data::{split_dataset, write_dataset, FeatureRecord, LabeledDataset, ModalityId, PrivacyLabel, SplitSpec};
use dmfp_core::eval::confusion_metrics as core_confusion_metrics;
use dmfp_core::fusion::{decide, FusionConfig, Variant};
use dmfp_core::linear::ProbabilityPair;
use dmfp_core::pipeline::{evaluate, predict_all, PipelineConfig, Systems, TrainedPipeline};
use dmfp_core::synth::{generate, SynthConfig};
use dmfp_core::worked_example::run_worked_example;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(dmfp, DmfpError, PyException, "Raised for any pipeline failure; the message starts with its kind.");

fn err(e: dmfp_core::DmfpError) -> PyErr {
    DmfpError::new_err(format!("[{}] {e}", e.kind()))
}

fn json<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| DmfpError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn label(s: &str) -> PyResult<PrivacyLabel> {
    s.parse().map_err(err)
}

#[pyclass(name = "Dataset", module = "dmfp")]
struct PyDataset {
    inner: LabeledDataset,
}

#[pymethods]
impl PyDataset {
    /// Loads a manifest and its per-modality CSV files.
    #[staticmethod]
    fn load(manifest: PathBuf) -> PyResult<Self> {
        Ok(PyDataset {
            inner: dmfp_core::data::load_dataset(manifest).map_err(err)?,
        })
    }

    /// One row per record in each block; labels are "private"/"public".
    #[staticmethod]
    #[pyo3(signature = (ids, object, scene, tag, labels=None))]
    fn from_arrays(
        ids: Vec<String>,
        object: Vec<Vec<f64>>,
        scene: Vec<Vec<f64>>,
        tag: Vec<Vec<f64>>,
        labels: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let n = ids.len();
        if [object.len(), scene.len(), tag.len()].iter().any(|&l| l != n)
            || labels.as_ref().is_some_and(|l| l.len() != n)
        {
            return Err(DmfpError::new_err("[length_mismatch] every array needs one row per id"));
        }
        let mut blocks = [object.into_iter(), scene.into_iter(), tag.into_iter()];
        let mut records = Vec::with_capacity(n);
        for (i, id) in ids.into_iter().enumerate() {
            let b: BTreeMap<ModalityId, Vec<f64>> = ModalityId::ALL
                .iter()
                .zip(blocks.iter_mut())
                .map(|(&m, it)| (m, it.next().expect("length checked")))
                .collect();
            let l = labels.as_ref().map(|l| label(&l[i])).transpose()?;
            records.push(FeatureRecord::new(id, b, l));
        }
        Ok(PyDataset {
            inner: LabeledDataset::from_records(records).map_err(err)?,
        })
    }

    /// Writes manifest + CSVs; returns the manifest path.
    fn write(&self, dir: PathBuf) -> PyResult<String> {
        Ok(write_dataset(&self.inner, dir).map_err(err)?.display().to_string())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        let (p, u) = self.inner.class_counts();
        format!("Dataset({} records, {p} private, {u} public)", self.inner.len())
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.ids().map(str::to_string).collect()
    }

    #[getter]
    fn labels(&self) -> Vec<Option<String>> {
        self.inner
            .records()
            .iter()
            .map(|r| r.label.map(|l| l.as_str().to_string()))
            .collect()
    }

    /// Block widths, object, scene, tag.
    #[getter]
    fn dims(&self) -> Vec<usize> {
        ModalityId::ALL.iter().map(|&m| self.inner.dim(m).unwrap_or(0)).collect()
    }

    /// (train, estimate, test), stratified by label by default.
    #[pyo3(signature = (seed=0, fractions=None, stratified=true))]
    fn split(&self, seed: u64, fractions: Option<[f64; 3]>, stratified: bool) -> PyResult<(Self, Self, Self)> {
        let spec = SplitSpec {
            seed,
            fractions: fractions.unwrap_or(SplitSpec::default().fractions),
            stratified,
        };
        let s = split_dataset(&self.inner, &spec).map_err(err)?;
        Ok((
            PyDataset { inner: s.train },
            PyDataset { inner: s.estimate },
            PyDataset { inner: s.test },
        ))
    }
}

/// A synthetic dataset whose regions each favor one modality.
#[pyfunction]
#[pyo3(signature = (n=3000, seed=0, n_regions=3, noise=0.1, class_ratio=0.25, dims=None))]
fn generate_synthetic(
    n: usize,
    seed: u64,
    n_regions: usize,
    noise: f64,
    class_ratio: f64,
    dims: Option<[usize; 3]>,
) -> PyResult<PyDataset> {
    let cfg = SynthConfig {
        n,
        seed,
        n_regions,
        noise,
        class_ratio,
        dims: dims.unwrap_or(SynthConfig::default().dims),
        ..SynthConfig::default()
    };
    Ok(PyDataset {
        inner: generate(&cfg).map_err(err)?.0,
    })
}

enum System {
    Variant(Variant),
    Baseline(BaselineKind),
}

fn system(name: &str) -> PyResult<System> {
    if let Ok(v) = name.parse::<Variant>() {
        return Ok(System::Variant(v));
    }
    name.parse::<BaselineKind>().map(System::Baseline).map_err(err)
}

#[pyclass(name = "Pipeline", module = "dmfp")]
struct PyPipeline {
    inner: TrainedPipeline,
}

impl PyPipeline {
    fn predictor(&self, name: &str) -> PyResult<Box<dyn Predictor + '_>> {
        Ok(match system(name)? {
            System::Variant(v) => Box::new(self.inner.variant(v).map_err(err)?),
            System::Baseline(b) => {
                if !self.inner.bundle.baseline_kinds.contains(&b) {
                    return Err(DmfpError::new_err(format!("[invalid_config] baseline {b} was not trained")));
                }
                Box::new(self.inner.baseline(b).map_err(err)?)
            }
        })
    }
}

#[pymethods]
impl PyPipeline {
    /// Trains base classifiers on `train` and competence models on
    /// `estimate`. `config` is an optional JSON pipeline configuration; the
    /// keyword arguments override it.
    #[staticmethod]
    #[pyo3(signature = (train, estimate, k_v=None, k_p=None, seed=None, threshold=None, variants=vec![], baselines=vec![], config=None))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        train: &PyDataset,
        estimate: &PyDataset,
        k_v: Option<usize>,
        k_p: Option<usize>,
        seed: Option<u64>,
        threshold: Option<f64>,
        variants: Vec<String>,
        baselines: Vec<String>,
        config: Option<&str>,
    ) -> PyResult<Self> {
        let mut cfg: PipelineConfig = match config {
            Some(text) => serde_json::from_str(text).map_err(|e| DmfpError::new_err(format!("[parse] {e}")))?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = seed {
            cfg = cfg.with_seed(s);
        }
        if let Some(k) = k_v {
            cfg.fusion.ncfg.k_v = k;
        }
        if let Some(k) = k_p {
            cfg.fusion.ncfg.k_p = k;
        }
        if let Some(t) = threshold {
            cfg.fusion.threshold = t;
        }
        let systems = Systems {
            variants: variants.iter().map(|v| v.parse()).collect::<Result<_, _>>().map_err(err)?,
            baselines: baselines.iter().map(|b| b.parse()).collect::<Result<_, _>>().map_err(err)?,
        };
        let (t, e) = (&train.inner, &estimate.inner);
        let inner = py
            .detach(|| TrainedPipeline::train(t, e, &cfg, &systems))
            .map_err(err)?;
        Ok(PyPipeline { inner })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(PyPipeline {
            inner: TrainedPipeline::load(dir).map_err(err)?,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save(dir).map_err(err)
    }

    /// Names of every trained system, DMFP first.
    fn systems(&self) -> PyResult<Vec<String>> {
        Ok(self.inner.predictors().map_err(err)?.iter().map(|p| p.name()).collect())
    }

    /// One dict per record: id, label, decision path, selected votes, tallies.
    #[pyo3(signature = (data, system="DMFP"))]
    fn predict<'py>(&self, py: Python<'py>, data: &PyDataset, system: &str) -> PyResult<Bound<'py, PyAny>> {
        let p = self.predictor(system)?;
        let preds = py.detach(|| predict_all(p.as_ref(), &data.inner)).map_err(err)?;
        json(py, &preds)
    }

    #[pyo3(signature = (data, system="DMFP"))]
    fn predict_labels(&self, py: Python<'_>, data: &PyDataset, system: &str) -> PyResult<Vec<String>> {
        let p = self.predictor(system)?;
        let preds = py.detach(|| predict_all(p.as_ref(), &data.inner)).map_err(err)?;
        Ok(preds.iter().map(|x| x.label.as_str().to_string()).collect())
    }

    /// Reports for every trained system plus agreement and error-correction tables.
    fn evaluate<'py>(&self, py: Python<'py>, test: &PyDataset) -> PyResult<Bound<'py, PyAny>> {
        let ev = py.detach(|| evaluate(&self.inner, &test.inner)).map_err(err)?;
        json(
            py,
            &serde_json::json!({
                "reports": ev.reports(),
                "exploratory": ev.exploratory,
                "error_correction": ev.corrections,
            }),
        )
    }
}

/// Precision, recall and F1 per class, macro and weighted averages, accuracy (%).
#[pyfunction]
fn confusion_metrics<'py>(py: Python<'py>, preds: Vec<String>, golds: Vec<String>) -> PyResult<Bound<'py, PyAny>> {
    let p = preds.iter().map(|s| label(s)).collect::<PyResult<Vec<_>>>()?;
    let g = golds.iter().map(|s| label(s)).collect::<PyResult<Vec<_>>>()?;
    json(py, &core_confusion_metrics(&p, &g).map_err(err)?)
}

/// Gating and competence-weighted voting for one target, given each base
/// classifier's private posterior and competence score (object, scene, tag).
#[pyfunction]
#[pyo3(signature = (private_posteriors, scores, threshold=0.5))]
fn fuse<'py>(
    py: Python<'py>,
    private_posteriors: [f64; 3],
    scores: [f64; 3],
    threshold: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = FusionConfig {
        threshold,
        ..FusionConfig::default()
    };
    cfg.validate().map_err(err)?;
    let pairs = private_posteriors.map(ProbabilityPair::from_private);
    let labels = pairs.map(|p| p.label_with_tie(cfg.half_posterior_label));
    json(py, &decide(&pairs, &labels, scores, &cfg).map_err(err)?)
}

#[pyfunction]
fn majority_vote(private_posteriors: [f64; 3]) -> String {
    majority_vote_predict(&private_posteriors.map(ProbabilityPair::from_private))
        .as_str()
        .to_string()
}

/// Printed walkthrough of the twelve-record worked example.
#[pyfunction]
fn worked_example() -> PyResult<String> {
    Ok(run_worked_example().map_err(err)?.render())
}

#[pyfunction]
fn worked_example_report(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    json(py, &run_worked_example().map_err(err)?)
}

#[pymodule]
fn dmfp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DmfpError", m.py().get_type::<DmfpError>())?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyPipeline>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(confusion_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(majority_vote, m)?)?;
    m.add_function(wrap_pyfunction!(worked_example, m)?)?;
    m.add_function(wrap_pyfunction!(worked_example_report, m)?)?;
    Ok(())
}
