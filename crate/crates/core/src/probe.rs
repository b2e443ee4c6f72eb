//! Deterministic multinomial logistic-regression probes.
//!
//! Probes measure what a linear classifier can read out of (possibly erased)
//! embeddings, for both the main task and attribute leakage. Training is
//! full-batch gradient descent with backtracking line search from a zero
//! initialization, so identical inputs give bit-identical models — no
//! stochastic solver, no run-to-run drift.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::write_atomic;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("training labels contain fewer than two classes")]
    SingleClassInput,
    #[error("features contain NaN/Inf")]
    NonFiniteFeature,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            max_iter: 1000,
            tol: 1e-4,
            l2: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeModel {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub config: ProbeConfig,
}

impl ProbeModel {
    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct ProbeGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Objective value (mean cross-entropy plus l2/(2n)·‖W‖²) and its gradient.
pub fn loss_and_grad(
    model: &ProbeModel,
    x: &Array2<f64>,
    labels: &[usize],
) -> Result<(f64, ProbeGrad), ProbeError> {
    validate_shapes(model, x, labels)?;
    let n = x.nrows();
    let c = model.num_classes();
    let probs = softmax_rows(&logits(model, x));

    let mut loss = 0.0;
    let mut delta = probs;
    for (i, &label) in labels.iter().enumerate() {
        loss -= delta[[i, label]].max(f64::MIN_POSITIVE).ln();
        delta[[i, label]] -= 1.0;
    }
    loss /= n as f64;

    let scale = 1.0 / n as f64;
    let mut gw = delta.t().dot(x);
    gw.mapv_inplace(|v| v * scale);
    let reg_scale = model.config.l2 * scale;
    loss += 0.5 * reg_scale * model.weights.iter().map(|w| w * w).sum::<f64>();
    gw.zip_mut_with(&model.weights, |g, &w| *g += reg_scale * w);

    let mut gb = Array1::<f64>::zeros(c);
    for i in 0..n {
        for j in 0..c {
            gb[j] += delta[[i, j]];
        }
    }
    gb.mapv_inplace(|v| v * scale);

    Ok((loss, ProbeGrad { weights: gw, bias: gb }))
}

fn loss_only(model: &ProbeModel, x: &Array2<f64>, labels: &[usize]) -> f64 {
    let n = x.nrows();
    let probs = softmax_rows(&logits(model, x));
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        loss -= probs[[i, label]].max(f64::MIN_POSITIVE).ln();
    }
    loss / n as f64
        + 0.5 * model.config.l2 / n as f64 * model.weights.iter().map(|w| w * w).sum::<f64>()
}

fn logits(model: &ProbeModel, x: &Array2<f64>) -> Array2<f64> {
    let mut l = x.dot(&model.weights.t());
    for mut row in l.rows_mut() {
        row.zip_mut_with(&model.bias, |v, &b| *v += b);
    }
    l
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s: f64 = row.iter().sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

fn validate_shapes(model: &ProbeModel, x: &Array2<f64>, labels: &[usize]) -> Result<(), ProbeError> {
    if x.ncols() != model.dim() {
        return Err(ProbeError::DimensionMismatch(format!(
            "x has {} features, model expects {}",
            x.ncols(),
            model.dim()
        )));
    }
    if labels.len() != x.nrows() {
        return Err(ProbeError::DimensionMismatch(format!(
            "{} rows but {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= model.num_classes()) {
        return Err(ProbeError::DimensionMismatch(format!(
            "label {} out of range for {} classes",
            bad,
            model.num_classes()
        )));
    }
    Ok(())
}

/// Trains a probe on (x, labels). The class count is the largest label + 1.
/// Stops when the gradient ∞-norm falls below `config.tol` or after
/// `config.max_iter` accepted steps.
pub fn train_probe(
    x: &Array2<f64>,
    labels: &[usize],
    config: &ProbeConfig,
) -> Result<ProbeModel, ProbeError> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ProbeError::NonFiniteFeature);
    }
    if labels.len() != x.nrows() {
        return Err(ProbeError::DimensionMismatch(format!(
            "{} rows but {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    let distinct: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(ProbeError::SingleClassInput);
    }
    let n_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    let d = x.ncols();

    let mut model = ProbeModel {
        weights: Array2::zeros((n_classes, d)),
        bias: Array1::zeros(n_classes),
        config: config.clone(),
    };

    const ARMIJO_C1: f64 = 1e-4;
    let mut step = 1.0_f64;
    for _ in 0..config.max_iter {
        let (loss, grad) = loss_and_grad(&model, x, labels)?;
        let gnorm = grad
            .weights
            .iter()
            .chain(grad.bias.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        if gnorm <= config.tol {
            break;
        }
        let gsq: f64 = grad.weights.iter().map(|g| g * g).sum::<f64>()
            + grad.bias.iter().map(|g| g * g).sum::<f64>();

        // backtrack until the Armijo condition holds
        let mut accepted = false;
        while step > 1e-20 {
            let mut candidate = model.clone();
            candidate
                .weights
                .zip_mut_with(&grad.weights, |w, &g| *w -= step * g);
            candidate.bias.zip_mut_with(&grad.bias, |b, &g| *b -= step * g);
            if loss_only(&candidate, x, labels) <= loss - ARMIJO_C1 * step * gsq {
                model = candidate;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break; // step size underflowed; nothing left to gain
        }
        step = (step * 2.0).min(1e6);
    }
    Ok(model)
}

/// Argmax of the logits; ties go to the lowest class id.
pub fn predict(model: &ProbeModel, x: &Array2<f64>) -> Result<Vec<usize>, ProbeError> {
    if x.ncols() != model.dim() {
        return Err(ProbeError::DimensionMismatch(format!(
            "x has {} features, model expects {}",
            x.ncols(),
            model.dim()
        )));
    }
    let l = logits(model, x);
    Ok(l
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            let mut best_v = row[0];
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > best_v {
                    best = j;
                    best_v = v;
                }
            }
            best
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct ProbeFile {
    class_names: Vec<String>,
    weights: Vec<f64>,
    bias: Vec<f64>,
    config: ProbeConfig,
}

pub fn save_probe(
    model: &ProbeModel,
    class_names: &[String],
    path: &Path,
) -> Result<(), ProbeError> {
    let file = ProbeFile {
        class_names: class_names.to_vec(),
        weights: model.weights.iter().copied().collect(),
        bias: model.bias.to_vec(),
        config: model.config.clone(),
    };
    let text = serde_json::to_string_pretty(&file)?;
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

pub fn load_probe(path: &Path) -> Result<(ProbeModel, Vec<String>), ProbeError> {
    let text = fs::read_to_string(path)?;
    let file: ProbeFile = serde_json::from_str(&text)?;
    let c = file.class_names.len().max(file.bias.len());
    if file.bias.len() != c || c == 0 || file.weights.len() % c != 0 {
        return Err(ProbeError::DimensionMismatch(
            "probe file has inconsistent shapes".into(),
        ));
    }
    let d = file.weights.len() / c;
    let weights = Array2::from_shape_vec((c, d), file.weights)
        .map_err(|e| ProbeError::DimensionMismatch(e.to_string()))?;
    Ok((
        ProbeModel {
            weights,
            bias: Array1::from(file.bias),
            config: file.config,
        },
        file.class_names,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
        let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
        hits as f64 / truth.len() as f64
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| {
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            side + (rng.random::<f64>() - 0.5) * 0.02
        });
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let model = train_probe(&x, &labels, &ProbeConfig::default()).unwrap();
        let pred = predict(&model, &x).unwrap();
        assert_eq!(accuracy(&pred, &labels), 1.0);
    }

    #[test]
    fn independent_labels_stay_near_majority() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 2000;
        let x = Array2::from_shape_fn((n, 8), |_| rng.random::<f64>() - 0.5);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let majority = {
            let ones = labels.iter().filter(|&&l| l == 1).count();
            (ones.max(n - ones)) as f64 / n as f64
        };
        let model = train_probe(&x, &labels, &ProbeConfig::default()).unwrap();
        let pred = predict(&model, &x).unwrap();
        let acc = accuracy(&pred, &labels);
        assert!(
            (acc - majority).abs() <= 0.03,
            "train accuracy {acc} strayed from majority {majority}"
        );
    }

    #[test]
    fn duplicating_samples_keeps_the_decision_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 60;
        let x = Array2::from_shape_fn((n, 3), |_| rng.random::<f64>() * 2.0 - 1.0);
        let labels: Vec<usize> = (0..n).map(|i| usize::from(x[[i, 0]] + x[[i, 1]] > 0.1)).collect();
        let x2 = ndarray::concatenate![ndarray::Axis(0), x, x];
        let mut labels2 = labels.clone();
        labels2.extend_from_slice(&labels);

        let m1 = train_probe(&x, &labels, &ProbeConfig::default()).unwrap();
        let m2 = train_probe(&x2, &labels2, &ProbeConfig::default()).unwrap();
        assert_eq!(predict(&m1, &x).unwrap(), predict(&m2, &x).unwrap());
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((50, 4), |_| rng.random::<f64>() - 0.5);
        let labels: Vec<usize> = (0..50).map(|i| i % 3).collect();
        let a = train_probe(&x, &labels, &ProbeConfig::default()).unwrap();
        let b = train_probe(&x, &labels, &ProbeConfig::default()).unwrap();
        let same = a
            .weights
            .iter()
            .zip(b.weights.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits())
            && a.bias
                .iter()
                .zip(b.bias.iter())
                .all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same);
    }

    #[test]
    fn training_loss_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((80, 5), |_| rng.random::<f64>() - 0.5);
        let labels: Vec<usize> = (0..80).map(|_| rng.random_range(0..2)).collect();

        // replicate the accepted-step sequence and watch the loss
        let mut model = ProbeModel {
            weights: Array2::zeros((2, 5)),
            bias: Array1::zeros(2),
            config: ProbeConfig {
                max_iter: 40,
                ..ProbeConfig::default()
            },
        };
        let mut step = 1.0;
        let mut prev = loss_only(&model, &x, &labels);
        for _ in 0..40 {
            let (loss, grad) = loss_and_grad(&model, &x, &labels).unwrap();
            let gsq: f64 = grad.weights.iter().map(|g| g * g).sum::<f64>()
                + grad.bias.iter().map(|g| g * g).sum::<f64>();
            loop {
                let mut cand = model.clone();
                cand.weights.zip_mut_with(&grad.weights, |w, &g| *w -= step * g);
                cand.bias.zip_mut_with(&grad.bias, |b, &g| *b -= step * g);
                if loss_only(&cand, &x, &labels) <= loss - 1e-4 * step * gsq {
                    model = cand;
                    break;
                }
                step *= 0.5;
            }
            let now = loss_only(&model, &x, &labels);
            assert!(now <= prev + 1e-15);
            prev = now;
            step *= 2.0;
        }
    }

    #[test]
    fn uniform_logits_loss_is_ln_k() {
        let model = ProbeModel {
            weights: Array2::zeros((2, 3)),
            bias: Array1::zeros(2),
            config: ProbeConfig::default(),
        };
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i + j) as f64);
        let labels = vec![0, 1, 0, 1];
        let (loss, _) = loss_and_grad(&model, &x, &labels).unwrap();
        assert!((loss - 2.0_f64.ln()).abs() <= 1e-14);

        // zero l2 removes the weight-norm term exactly
        let mut with_w = model.clone();
        with_w.weights[[0, 0]] = 2.0;
        let (l_reg, _) = loss_and_grad(&with_w, &x, &labels).unwrap();
        let mut no_reg = with_w.clone();
        no_reg.config.l2 = 0.0;
        let (l_free, _) = loss_and_grad(&no_reg, &x, &labels).unwrap();
        let n = 4.0;
        assert!((l_reg - l_free - 0.5 * 1.0 / n * 4.0).abs() <= 1e-14);
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Array2::from_shape_fn((5, 3), |_| rng.random::<f64>() * 2.0 - 1.0);
            let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..2)).collect();
            let mut model = ProbeModel {
                weights: Array2::from_shape_fn((2, 3), |_| rng.random::<f64>() - 0.5),
                bias: Array1::from_shape_fn(2, |_| rng.random::<f64>() - 0.5),
                config: ProbeConfig::default(),
            };
            let (_, grad) = loss_and_grad(&model, &x, &labels).unwrap();

            let h = 1e-6;
            let mut fd_w = Array2::<f64>::zeros((2, 3));
            for i in 0..2 {
                for j in 0..3 {
                    let orig = model.weights[[i, j]];
                    model.weights[[i, j]] = orig + h;
                    let up = loss_only(&model, &x, &labels);
                    model.weights[[i, j]] = orig - h;
                    let dn = loss_only(&model, &x, &labels);
                    model.weights[[i, j]] = orig;
                    fd_w[[i, j]] = (up - dn) / (2.0 * h);
                }
            }
            let mut fd_b = Array1::<f64>::zeros(2);
            for i in 0..2 {
                let orig = model.bias[i];
                model.bias[i] = orig + h;
                let up = loss_only(&model, &x, &labels);
                model.bias[i] = orig - h;
                let dn = loss_only(&model, &x, &labels);
                model.bias[i] = orig;
                fd_b[i] = (up - dn) / (2.0 * h);
            }

            let scale = grad
                .weights
                .iter()
                .chain(grad.bias.iter())
                .fold(0.0_f64, |m, v| m.max(v.abs()));
            let err = grad
                .weights
                .iter()
                .zip(fd_w.iter())
                .chain(grad.bias.iter().zip(fd_b.iter()))
                .fold(0.0_f64, |m, (a, f)| m.max((a - f).abs()));
            assert!(
                err / scale.max(1e-12) <= 1e-5,
                "seed {seed}: relative gradient error {}",
                err / scale
            );
        }
    }

    #[test]
    fn predict_tie_break_and_bias() {
        let zero = ProbeModel {
            weights: Array2::zeros((2, 2)),
            bias: Array1::zeros(2),
            config: ProbeConfig::default(),
        };
        let x = Array2::from_shape_fn((3, 2), |(i, j)| (i * 2 + j) as f64);
        assert_eq!(predict(&zero, &x).unwrap(), vec![0, 0, 0]);

        let biased = ProbeModel {
            weights: Array2::zeros((2, 2)),
            bias: Array1::from(vec![0.0, 10.0]),
            config: ProbeConfig::default(),
        };
        assert_eq!(predict(&biased, &x).unwrap(), vec![1, 1, 1]);
    }

    #[test]
    fn single_class_and_non_finite_inputs_error() {
        let x = Array2::<f64>::zeros((4, 2));
        assert!(matches!(
            train_probe(&x, &[1, 1, 1, 1], &ProbeConfig::default()),
            Err(ProbeError::SingleClassInput)
        ));
        let mut bad = x.clone();
        bad[[0, 0]] = f64::NAN;
        assert!(matches!(
            train_probe(&bad, &[0, 1, 0, 1], &ProbeConfig::default()),
            Err(ProbeError::NonFiniteFeature)
        ));
    }

    #[test]
    fn probe_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = ProbeModel {
            weights: Array2::from_shape_fn((2, 3), |(i, j)| (i + j) as f64 * 0.25),
            bias: Array1::from(vec![0.5, -0.5]),
            config: ProbeConfig::default(),
        };
        let path = dir.path().join("probe.json");
        save_probe(&model, &["neg".into(), "pos".into()], &path).unwrap();
        let (loaded, names) = load_probe(&path).unwrap();
        assert_eq!(names, vec!["neg".to_string(), "pos".to_string()]);
        assert_eq!(loaded.weights, model.weights);
        assert_eq!(loaded.bias, model.bias);
    }
}
