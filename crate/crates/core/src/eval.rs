//! Metrics and report tables.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::PrivacyLabel;
use crate::error::{DmfpError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragedMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub system: String,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: RunMetadata,
    pub private: ClassMetrics,
    pub public: ClassMetrics,
    /// Percentage of correct predictions.
    pub accuracy: f64,
    /// Unweighted mean over the two classes.
    pub macro_avg: AveragedMetrics,
    /// Support-weighted mean over the two classes.
    pub weighted_avg: AveragedMetrics,
    pub total: usize,
    pub correct: usize,
}

/// `100 * num / den` with a single rounding; 0 when `den` is 0.
fn percent(num: usize, den: usize) -> f64 {
    Frac::new(100 * num as u128, den as u128).value()
}

/// Exact non-negative fraction; a zero denominator stands for 0. Every
/// reported metric is one of these, so each is the correctly rounded value
/// of its rational definition (as long as the terms stay below 2^53).
#[derive(Debug, Clone, Copy)]
struct Frac {
    num: u128,
    den: u128,
}

impl Frac {
    fn new(num: u128, den: u128) -> Frac {
        if den == 0 {
            Frac { num: 0, den: 1 }
        } else {
            Frac { num, den }
        }
    }

    fn add(self, o: Frac) -> Frac {
        Frac::new(self.num * o.den + o.num * self.den, self.den * o.den)
    }

    fn scale(self, k: u128, d: u128) -> Frac {
        Frac::new(self.num * k, self.den * d)
    }

    fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

#[derive(Debug, Clone, Copy)]
struct ClassFracs {
    precision: Frac,
    recall: Frac,
    /// `2tp / (2tp + fp + fn)`, the harmonic mean of precision and recall.
    f1: Frac,
    support: usize,
}

impl ClassFracs {
    fn metrics(&self) -> ClassMetrics {
        ClassMetrics {
            precision: self.precision.value(),
            recall: self.recall.value(),
            f1: self.f1.value(),
            support: self.support,
        }
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(DmfpError::LengthMismatch {
            expected: b,
            actual: a,
        });
    }
    if a == 0 {
        return Err(DmfpError::Empty("predictions".into()));
    }
    Ok(())
}

/// Per-class and averaged precision/recall/F1 plus accuracy.
pub fn confusion_metrics(preds: &[PrivacyLabel], golds: &[PrivacyLabel]) -> Result<EvalReport> {
    check_lengths(preds.len(), golds.len())?;
    let class = |c: PrivacyLabel| {
        let tp = preds.iter().zip(golds).filter(|(p, g)| **p == c && **g == c).count() as u128;
        let predicted = preds.iter().filter(|p| **p == c).count() as u128;
        let support = golds.iter().filter(|g| **g == c).count();
        ClassFracs {
            precision: Frac::new(tp, predicted),
            recall: Frac::new(tp, support as u128),
            f1: Frac::new(2 * tp, predicted + support as u128),
            support,
        }
    };
    let (p, u) = (class(PrivacyLabel::Private), class(PrivacyLabel::Public));
    let total = golds.len();
    let correct = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    let n = total as u128;
    let mean = |a: Frac, b: Frac| a.add(b).scale(1, 2);
    let weighted = |a: Frac, b: Frac| a.scale(p.support as u128, n).add(b.scale(u.support as u128, n));
    Ok(EvalReport {
        meta: RunMetadata::default(),
        private: p.metrics(),
        public: u.metrics(),
        accuracy: Frac::new(100 * correct as u128, n).value(),
        macro_avg: AveragedMetrics {
            precision: mean(p.precision, u.precision).value(),
            recall: mean(p.recall, u.recall).value(),
            f1: mean(p.f1, u.f1).value(),
        },
        weighted_avg: AveragedMetrics {
            precision: weighted(p.precision, u.precision).value(),
            recall: weighted(p.recall, u.recall).value(),
            f1: weighted(p.f1, u.f1).value(),
        },
        total,
        correct,
    })
}

impl EvalReport {
    /// Named scalar metrics, in a fixed order.
    pub fn metric_values(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("accuracy", self.accuracy),
            ("private_precision", self.private.precision),
            ("private_recall", self.private.recall),
            ("private_f1", self.private.f1),
            ("public_precision", self.public.precision),
            ("public_recall", self.public.recall),
            ("public_f1", self.public.f1),
            ("macro_precision", self.macro_avg.precision),
            ("macro_recall", self.macro_avg.recall),
            ("macro_f1", self.macro_avg.f1),
            ("weighted_precision", self.weighted_avg.precision),
            ("weighted_recall", self.weighted_avg.recall),
            ("weighted_f1", self.weighted_avg.f1),
        ]
    }
}

/// Aligned plain-text table; the first column is left-aligned, the rest right-aligned.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .chain([header[c].chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let fmt_row = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let w = widths[c];
                if c == 0 {
                    format!("{s:<w$}")
                } else {
                    format!("{s:>w$}")
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = fmt_row(header.to_vec());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1)));
    out.push('\n');
    for r in rows {
        out.push_str(&fmt_row(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

/// Side-by-side metric table for several systems.
pub fn render_reports(reports: &[EvalReport]) -> String {
    let header = [
        "system", "acc(%)", "Pr P", "Pr R", "Pr F1", "Pu P", "Pu R", "Pu F1", "macro P", "macro R",
        "macro F1", "wtd P", "wtd R", "wtd F1",
    ];
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![r.meta.system.clone(), format!("{:.2}", r.accuracy)];
            row.extend(r.metric_values().into_iter().skip(1).map(|(_, v)| format!("{v:.3}")));
            row
        })
        .collect();
    render_table(&header, &rows)
}

/// One row of rates (percentages) split by gold class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub name: String,
    #[serde(rename = "Pr")]
    pub private: f64,
    #[serde(rename = "Pu")]
    pub public: f64,
    #[serde(rename = "O")]
    pub overall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploratoryTable {
    /// One row per modality followed by all-correct, all-wrong and at-least-one-correct.
    pub rows: Vec<RateRow>,
}

impl ExploratoryTable {
    pub fn row(&self, name: &str) -> Option<&RateRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn render(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.name.clone(),
                    format!("{:.2}", r.private),
                    format!("{:.2}", r.public),
                    format!("{:.2}", r.overall),
                ]
            })
            .collect();
        render_table(&["", "Pr(%)", "Pu(%)", "O(%)"], &rows)
    }
}

pub const ALL_CORRECT: &str = "all correct";
pub const ALL_WRONG: &str = "all wrong";
pub const AT_LEAST_ONE: &str = "at least one correct";

/// Per-modality correctness rates and the agreement rows. Per-class columns
/// are the fraction of that class's records meeting the row's condition.
pub fn exploratory_analysis(
    per_modality: &[(String, Vec<PrivacyLabel>)],
    golds: &[PrivacyLabel],
) -> Result<ExploratoryTable> {
    if per_modality.is_empty() {
        return Err(DmfpError::Empty("modality predictions".into()));
    }
    for (_, p) in per_modality {
        check_lengths(p.len(), golds.len())?;
    }
    let rates = |hit: &dyn Fn(usize) -> bool, name: &str| {
        let count = |class: Option<PrivacyLabel>| {
            let idx = (0..golds.len()).filter(|&i| class.is_none_or(|c| golds[i] == c));
            let (n, h) = idx.fold((0, 0), |(n, h), i| (n + 1, h + usize::from(hit(i))));
            percent(h, n)
        };
        RateRow {
            name: name.to_string(),
            private: count(Some(PrivacyLabel::Private)),
            public: count(Some(PrivacyLabel::Public)),
            overall: count(None),
        }
    };
    let mut rows: Vec<RateRow> = per_modality
        .iter()
        .map(|(name, p)| rates(&|i| p[i] == golds[i], name))
        .collect();
    let n_correct = |i: usize| per_modality.iter().filter(|(_, p)| p[i] == golds[i]).count();
    rows.push(rates(&|i| n_correct(i) == per_modality.len(), ALL_CORRECT));
    let wrong = rates(&|i| n_correct(i) == 0, ALL_WRONG);
    let at_least = RateRow {
        name: AT_LEAST_ONE.to_string(),
        private: 100.0 - wrong.private,
        public: 100.0 - wrong.public,
        overall: 100.0 - wrong.overall,
    };
    rows.push(wrong);
    rows.push(at_least);
    Ok(ExploratoryTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRow {
    pub base: String,
    /// Percent of the base classifier's errors on that class the system gets
    /// right; absent when the base made no such errors.
    pub private: Option<f64>,
    pub public: Option<f64>,
    pub overall: Option<f64>,
    pub private_errors: usize,
    pub public_errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCorrectionTable {
    pub system: String,
    pub rows: Vec<CorrectionRow>,
}

pub fn error_correction(
    base_preds: &[(String, Vec<PrivacyLabel>)],
    system: &str,
    system_preds: &[PrivacyLabel],
    golds: &[PrivacyLabel],
) -> Result<ErrorCorrectionTable> {
    check_lengths(system_preds.len(), golds.len())?;
    let mut rows = Vec::new();
    for (name, preds) in base_preds {
        check_lengths(preds.len(), golds.len())?;
        let tally = |class: Option<PrivacyLabel>| {
            let errs: Vec<usize> = (0..golds.len())
                .filter(|&i| preds[i] != golds[i] && class.is_none_or(|c| golds[i] == c))
                .collect();
            let fixed = errs.iter().filter(|&&i| system_preds[i] == golds[i]).count();
            let pct = (!errs.is_empty()).then(|| percent(fixed, errs.len()));
            (pct, errs.len())
        };
        let (private, private_errors) = tally(Some(PrivacyLabel::Private));
        let (public, public_errors) = tally(Some(PrivacyLabel::Public));
        rows.push(CorrectionRow {
            base: name.clone(),
            private,
            public,
            overall: tally(None).0,
            private_errors,
            public_errors,
        });
    }
    Ok(ErrorCorrectionTable {
        system: system.to_string(),
        rows,
    })
}

impl ErrorCorrectionTable {
    pub fn render(&self) -> String {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| vec![r.base.clone(), f(r.private), f(r.public), f(r.overall)])
            .collect();
        format!(
            "errors corrected by {} (%)\n{}",
            self.system,
            render_table(&["base", "Pr(%)", "Pu(%)", "O(%)"], &rows)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> Result<MetricSummary> {
    if values.is_empty() {
        return Err(DmfpError::Empty("metric values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(MetricSummary { mean, std })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedSummary {
    pub system: String,
    pub runs: Vec<EvalReport>,
    pub metrics: Vec<(String, MetricSummary)>,
}

impl MultiSeedSummary {
    pub fn from_reports(system: &str, runs: Vec<EvalReport>) -> Result<Self> {
        if runs.is_empty() {
            return Err(DmfpError::Empty("seed runs".into()));
        }
        let names: Vec<&'static str> = runs[0].metric_values().into_iter().map(|(n, _)| n).collect();
        let metrics = names
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let vals: Vec<f64> = runs.iter().map(|r| r.metric_values()[k].1).collect();
                mean_std(&vals).map(|s| (name.to_string(), s))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiSeedSummary {
            system: system.to_string(),
            runs,
            metrics,
        })
    }

    pub fn get(&self, metric: &str) -> Option<MetricSummary> {
        self.metrics.iter().find(|(n, _)| n == metric).map(|(_, s)| *s)
    }

    pub fn values(&self, metric: &str) -> Vec<f64> {
        self.runs
            .iter()
            .filter_map(|r| r.metric_values().into_iter().find(|(n, _)| *n == metric).map(|(_, v)| v))
            .collect()
    }
}

pub fn render_summaries(summaries: &[MultiSeedSummary]) -> String {
    let shown = ["accuracy", "private_f1", "public_f1", "macro_f1", "weighted_f1"];
    let mut header = vec!["system"];
    header.extend(shown);
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            let mut row = vec![s.system.clone()];
            for m in shown {
                let v = s.get(m).expect("known metric");
                row.push(format!("{:.3} ± {:.3}", v.mean, v.std));
            }
            row
        })
        .collect();
    render_table(&header, &rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p_value: f64,
}

/// Two-sided paired t-test on matched samples.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    check_lengths(a.len(), b.len())?;
    if a.len() < 2 {
        return Err(DmfpError::InvalidConfig("a paired t-test needs at least two pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let s = mean_std(&diffs)?;
    let df = (diffs.len() - 1) as f64;
    if s.std == 0.0 {
        let (t, p) = if s.mean == 0.0 { (0.0, 1.0) } else { (s.mean.signum() * f64::INFINITY, 0.0) };
        return Ok(PairedTTest { t, df, p_value: p });
    }
    let t = s.mean / (s.std / (diffs.len() as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| DmfpError::InvalidConfig(e.to_string()))?;
    Ok(PairedTTest {
        t,
        df,
        p_value: 2.0 * (1.0 - dist.cdf(t.abs())),
    })
}

/// Private-class F1 over a (k_v, k_p) grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub k_v: Vec<usize>,
    pub k_p: Vec<usize>,
    /// `f1[i][j]` is the cell for `k_v[i]`, `k_p[j]`.
    pub f1: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub k_v: usize,
    pub k_p: usize,
    pub f1: f64,
}

impl SweepGrid {
    /// Highest F1; ties go to the earliest cell in row-major order.
    pub fn best(&self) -> Option<SweepCell> {
        let mut best: Option<SweepCell> = None;
        for (i, row) in self.f1.iter().enumerate() {
            for (j, &f1) in row.iter().enumerate() {
                if best.is_none_or(|b| f1 > b.f1) {
                    best = Some(SweepCell {
                        k_v: self.k_v[i],
                        k_p: self.k_p[j],
                        f1,
                    });
                }
            }
        }
        best
    }

    /// Rows are k_v values, columns k_p values.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["k_v\\k_p".to_string()];
        header.extend(self.k_p.iter().map(|k| k.to_string()));
        let to_err = |e: csv::Error| DmfpError::parse("sweep csv", e);
        w.write_record(&header).map_err(to_err)?;
        for (i, row) in self.f1.iter().enumerate() {
            let mut rec = vec![self.k_v[i].to_string()];
            rec.extend(row.iter().map(|f| format!("{f:.6}")));
            w.write_record(&rec).map_err(to_err)?;
        }
        let bytes = w.into_inner().map_err(|e| DmfpError::parse("sweep csv", e))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
