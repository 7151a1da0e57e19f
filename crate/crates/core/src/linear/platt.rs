use serde::{Deserialize, Serialize};

use crate::data::PrivacyLabel;
use crate::error::{DmfpError, Result};

/// `P(private | s) = 1 / (1 + exp(a·s + b))`.
///
/// Fitted on scores where positive means private, so `a < 0` whenever the
/// scores carry signal in that direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattSigmoid {
    pub a: f64,
    pub b: f64,
}

impl PlattSigmoid {
    /// Constant mapping that returns `p` for every score.
    pub fn constant(p: f64) -> Self {
        let p = p.clamp(1e-12, 1.0 - 1e-12);
        PlattSigmoid {
            a: 0.0,
            b: ((1.0 - p) / p).ln(),
        }
    }

    pub fn apply(&self, score: f64) -> f64 {
        let z = self.a * score + self.b;
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }
}

/// Cross-entropy of the sigmoid output against smoothed targets, written to
/// stay finite for large |z|.
fn objective(scores: &[f64], targets: &[f64], a: f64, b: f64) -> f64 {
    scores
        .iter()
        .zip(targets)
        .map(|(&s, &t)| {
            let z = s * a + b;
            if z >= 0.0 {
                t * z + (-z).exp().ln_1p()
            } else {
                (t - 1.0) * z + z.exp().ln_1p()
            }
        })
        .sum()
}

/// Fits a [`PlattSigmoid`] by Newton's method with backtracking line search
/// on the log-loss against the smoothed targets `(N₊+1)/(N₊+2)` and
/// `1/(N₋+2)`.
pub fn platt_fit(scores: &[f64], labels: &[PrivacyLabel]) -> Result<PlattSigmoid> {
    if scores.len() != labels.len() {
        return Err(DmfpError::LengthMismatch {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(DmfpError::NonFinite("calibration scores".into()));
    }
    let n_pos = labels.iter().filter(|l| l.is_private()).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(DmfpError::SingleClass(format!(
            "calibration set of {} examples",
            labels.len()
        )));
    }

    const MAX_ITER: usize = 100;
    const MIN_STEP: f64 = 1e-10;
    const SIGMA: f64 = 1e-12;
    const EPS: f64 = 1e-5;

    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let targets: Vec<f64> = labels
        .iter()
        .map(|l| if l.is_private() { hi } else { lo })
        .collect();

    let mut a = 0.0;
    let mut b = ((n_neg + 1.0) / (n_pos + 1.0)).ln();
    let mut fval = objective(scores, &targets, a, b);

    for _ in 0..MAX_ITER {
        let (mut h11, mut h22, mut h21) = (SIGMA, SIGMA, 0.0);
        let (mut g1, mut g2) = (0.0, 0.0);
        for (&s, &t) in scores.iter().zip(&targets) {
            let z = s * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += s * s * d2;
            h22 += d2;
            h21 += s * d2;
            let d1 = t - p;
            g1 += s * d1;
            g2 += d1;
        }
        if g1.abs() < EPS && g2.abs() < EPS {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;

        let mut step = 1.0;
        while step >= MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(scores, &targets, na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < MIN_STEP {
            break;
        }
    }
    Ok(PlattSigmoid { a, b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use PrivacyLabel::{Private, Public};

    fn log_loss(probs: &[f64], labels: &[PrivacyLabel]) -> f64 {
        probs
            .iter()
            .zip(labels)
            .map(|(&p, l)| {
                let p = p.clamp(1e-15, 1.0 - 1e-15);
                if l.is_private() {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum::<f64>()
            / probs.len() as f64
    }

    #[test]
    fn ordered_scores_beat_base_rate() {
        let scores: Vec<f64> = (0..40).map(|i| i as f64 / 10.0 - 2.0).collect();
        let labels: Vec<PrivacyLabel> = (0..40).map(|i| if i >= 30 { Private } else { Public }).collect();
        let sig = platt_fit(&scores, &labels).unwrap();
        assert!(sig.a < 0.0);
        let probs: Vec<f64> = scores.iter().map(|&s| sig.apply(s)).collect();
        let prior = vec![10.0 / 40.0; 40];
        assert!(log_loss(&probs, &labels) < log_loss(&prior, &labels));
    }

    #[test]
    fn constant_scores_give_prior() {
        let labels: Vec<PrivacyLabel> = (0..100).map(|i| if i < 25 { Private } else { Public }).collect();
        for c in [0.0, 1.7] {
            let sig = platt_fit(&vec![c; 100], &labels).unwrap();
            // smoothed prior: (25 + 1) / (25 + 2) vs 1 / (75 + 2) averaged = ~0.2597
            assert!((sig.apply(c) - 0.25).abs() < 0.02, "{}", sig.apply(c));
        }
    }

    #[test]
    fn negated_scores_flip_slope() {
        let scores = [-2.0, -1.5, -0.3, 0.1, 0.4, 0.2, 1.1, 2.5, -0.7, 0.9];
        let labels = [Public, Public, Public, Private, Public, Private, Private, Private, Public, Public];
        let sig = platt_fit(&scores, &labels).unwrap();

        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        let flipped = platt_fit(&negated, &labels).unwrap();
        assert!((flipped.a + sig.a).abs() < 1e-6);
        assert!((flipped.b - sig.b).abs() < 1e-6);
        for (&s, &ns) in scores.iter().zip(&negated) {
            assert!((sig.apply(s) - flipped.apply(ns)).abs() < 1e-6);
        }

        // Negating scores and swapping labels mirrors the posterior.
        let swapped: Vec<PrivacyLabel> = labels.iter().map(|l| l.other()).collect();
        let mirrored = platt_fit(&negated, &swapped).unwrap();
        for (&s, &ns) in scores.iter().zip(&negated) {
            assert!((sig.apply(s) - (1.0 - mirrored.apply(ns))).abs() < 1e-6);
        }
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(
            platt_fit(&[0.1, 0.2], &[Private, Private]),
            Err(DmfpError::SingleClass(_))
        ));
    }

    #[test]
    fn constant_sigmoid() {
        for p in [0.67, 0.42, 0.99] {
            let s = PlattSigmoid::constant(p);
            assert!((s.apply(123.0) - p).abs() < 1e-12);
        }
    }
}
