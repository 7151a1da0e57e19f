//! Stochastic (sub)gradient training of L2-regularized linear models.
//!
//! Step size follows `lr / (1 + lr·λ·t)`, the decaying schedule of
//! Pegasos-style solvers with a bounded first step. The returned model is
//! the running average of the iterates over the second half of training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_matrix, dot, sigmoid, LinearModel, LossKind, TrainConfig};
use crate::data::PrivacyLabel;
use crate::error::{DmfpError, Result};

/// Linear SVM: L2-regularized hinge loss.
pub fn train_hinge(
    features: &[Vec<f64>],
    labels: &[PrivacyLabel],
    cfg: &TrainConfig,
) -> Result<LinearModel> {
    let targets: Vec<bool> = labels.iter().map(|l| l.is_private()).collect();
    fit(features, &targets, cfg, LossKind::Hinge)
}

/// Logistic regression on binary targets (`true` is the positive class).
pub fn train_logistic(features: &[Vec<f64>], labels: &[bool], cfg: &TrainConfig) -> Result<LinearModel> {
    fit(features, labels, cfg, LossKind::Logistic)
}

fn fit(features: &[Vec<f64>], targets: &[bool], cfg: &TrainConfig, loss: LossKind) -> Result<LinearModel> {
    cfg.validate()?;
    let dim = check_matrix(features, targets.len())?;
    let n_pos = targets.iter().filter(|&&t| t).count();
    let n_neg = targets.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        let which = if n_pos == 0 { "negative" } else { "positive" };
        return Err(DmfpError::SingleClass(format!("all {} targets are {which}", targets.len())));
    }
    let n = targets.len() as f64;
    let (w_pos, w_neg) = if cfg.balanced {
        (n / (2.0 * n_pos as f64), n / (2.0 * n_neg as f64))
    } else {
        (1.0, 1.0)
    };

    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    let mut avg_weights = vec![0.0; dim];
    let mut avg_bias = 0.0;
    let mut averaged = 0usize;
    let average_from = cfg.epochs / 2;

    let lr = cfg.learning_rate;
    let lambda = cfg.l2_penalty;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..targets.len()).collect();
    let mut step = 0u64;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            step += 1;
            let eta = lr / (1.0 + lr * lambda * step as f64);
            let x = &features[i];
            let y = if targets[i] { 1.0 } else { -1.0 };
            let c = if targets[i] { w_pos } else { w_neg };
            let margin = y * (dot(&weights, x) + bias);
            // d(loss)/d(score)
            let g = match loss {
                LossKind::Hinge if margin < 1.0 => -y,
                LossKind::Hinge => 0.0,
                LossKind::Logistic => -y * sigmoid(-margin),
            };
            let decay = 1.0 - eta * lambda;
            if g != 0.0 {
                let s = eta * c * g;
                for (w, xi) in weights.iter_mut().zip(x) {
                    *w = *w * decay - s * xi;
                }
                bias -= s;
            } else if decay != 1.0 {
                weights.iter_mut().for_each(|w| *w *= decay);
            }

            if epoch >= average_from {
                averaged += 1;
                let k = 1.0 / averaged as f64;
                for (a, w) in avg_weights.iter_mut().zip(&weights) {
                    *a += (w - *a) * k;
                }
                avg_bias += (bias - avg_bias) * k;
            }
        }
    }

    if avg_weights.iter().any(|w| !w.is_finite()) || !avg_bias.is_finite() {
        return Err(DmfpError::NonFinite("trained weights (learning rate too large?)".into()));
    }
    Ok(LinearModel {
        weights: avg_weights,
        bias: avg_bias,
        loss_kind: loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Perceptron run to convergence: an independent witness that a data set
    /// is linearly separable.
    fn perceptron_separates(features: &[Vec<f64>], labels: &[bool]) -> bool {
        let dim = features[0].len();
        let mut w = vec![0.0; dim];
        let mut b = 0.0;
        for _ in 0..10_000 {
            let mut mistakes = 0;
            for (x, &t) in features.iter().zip(labels) {
                let y = if t { 1.0 } else { -1.0 };
                if y * (dot(&w, x) + b) <= 0.0 {
                    mistakes += 1;
                    for (wi, xi) in w.iter_mut().zip(x) {
                        *wi += y * xi;
                    }
                    b += y;
                }
            }
            if mistakes == 0 {
                return true;
            }
        }
        false
    }

    fn two_blobs() -> (Vec<Vec<f64>>, Vec<PrivacyLabel>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        use rand_distr::{Distribution, Normal};
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..120 {
            let private = i % 2 == 0;
            let c = if private { 2.0 } else { -2.0 };
            xs.push(vec![c + noise.sample(&mut rng), 0.5 * c + noise.sample(&mut rng)]);
            ys.push(if private {
                PrivacyLabel::Private
            } else {
                PrivacyLabel::Public
            });
        }
        (xs, ys)
    }

    #[test]
    fn hinge_fits_separable_blobs() {
        let (xs, ys) = two_blobs();
        let targets: Vec<bool> = ys.iter().map(|l| l.is_private()).collect();
        assert!(perceptron_separates(&xs, &targets));
        let m = train_hinge(&xs, &ys, &TrainConfig::default()).unwrap();
        let correct = xs
            .iter()
            .zip(&targets)
            .filter(|(x, &t)| (m.decision(x).unwrap() > 0.0) == t)
            .count();
        assert!(correct as f64 / xs.len() as f64 >= 0.95, "accuracy {correct}/120");
    }

    #[test]
    fn logistic_learns_and() {
        let base = [
            (vec![0.0, 0.0], false),
            (vec![0.0, 1.0], false),
            (vec![1.0, 0.0], false),
            (vec![1.0, 1.0], true),
        ];
        let xs: Vec<Vec<f64>> = base.iter().cycle().take(100).map(|(x, _)| x.clone()).collect();
        let ys: Vec<bool> = base.iter().cycle().take(100).map(|(_, y)| *y).collect();
        assert!(perceptron_separates(&xs, &ys));
        let m = train_logistic(&xs, &ys, &TrainConfig::default()).unwrap();
        for (x, y) in &base {
            assert_eq!(m.probability(x).unwrap() > 0.5, *y, "at {x:?}");
        }
    }

    #[test]
    fn zero_learning_rate_keeps_zero_weights() {
        let (xs, ys) = two_blobs();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let m = train_hinge(&xs, &ys, &cfg).unwrap();
        assert!(m.weights.iter().all(|&w| w == 0.0));
        assert_eq!(m.bias, 0.0);
    }

    #[test]
    fn deterministic_for_seed() {
        let (xs, ys) = two_blobs();
        let a = train_hinge(&xs, &ys, &TrainConfig::default()).unwrap();
        let b = train_hinge(&xs, &ys, &TrainConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let xs = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            train_logistic(&xs, &[true, true], &TrainConfig::default()),
            Err(DmfpError::SingleClass(_))
        ));
        let empty_rows = vec![vec![], vec![]];
        assert!(train_logistic(&empty_rows, &[true, false], &TrainConfig::default()).is_err());
    }
}
