//! Softmax, the per-head losses with their closed-form gradients, and the
//! joint cascade loss.

use crate::data::Targets;
use crate::error::{Error, Result};
use crate::model::{ForwardCache, LossSeeds, ModelState, Scope};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Per-pixel softmax over the channel axis of an `N×K×H×W` tensor.
pub fn softmax_probs(logits: &Tensor) -> Result<Tensor> {
    let (n, k, h, w) = logits.dims4();
    let plane = h * w;
    let x = logits.data();
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        let base = b * k * plane;
        for p in 0..plane {
            let at = |c: usize| base + c * plane + p;
            let max = (0..k).map(|c| x[at(c)]).fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(Error::NonFinite(format!("logits at sample {b}, pixel {p}")));
            }
            let mut sum = 0.0;
            for c in 0..k {
                let e = (x[at(c)] - max).exp();
                out[at(c)] = e;
                sum += e;
            }
            for c in 0..k {
                out[at(c)] /= sum;
            }
        }
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Loss value and gradient for one head.
#[derive(Debug, Clone)]
pub struct HeadLoss {
    pub loss: f64,
    pub grad: Tensor,
    /// Pixels that contributed; zero means the loss and gradient are zero.
    pub n_valid: usize,
}

/// Mean squared error over valid pixels (log-depth in, log-depth target).
pub fn regression_loss(pred: &Tensor, target: &Tensor, mask: &[bool]) -> Result<HeadLoss> {
    if pred.shape() != target.shape() || mask.len() != pred.len() {
        return Err(Error::shape(
            "regression_loss",
            format!("pred {:?}, target {:?}, mask {}", pred.shape(), target.shape(), mask.len()),
        ));
    }
    let n_valid = mask.iter().filter(|&&m| m).count();
    let mut grad = Tensor::zeros(pred.shape());
    if n_valid == 0 {
        return Ok(HeadLoss { loss: 0.0, grad, n_valid });
    }
    let norm = n_valid as f64;
    let mut loss = 0.0;
    for (i, g) in grad.data_mut().iter_mut().enumerate() {
        if mask[i] {
            let d = pred.data()[i] - target.data()[i];
            loss += d * d;
            *g = 2.0 * d / norm;
        }
    }
    Ok(HeadLoss {
        loss: loss / norm,
        grad,
        n_valid,
    })
}

/// Mean cross-entropy over pixels whose target is not `ignore_index`.
/// `targets` is laid out `N×H×W` to match the `N×K×H×W` logits.
pub fn classification_loss(logits: &Tensor, targets: &[usize], ignore_index: usize) -> Result<HeadLoss> {
    classification_loss_weighted(logits, targets, ignore_index, 1.0)
}

/// As [`classification_loss`] with a uniform per-pixel weight `lambda`.
pub fn classification_loss_weighted(logits: &Tensor, targets: &[usize], ignore_index: usize, lambda: f64) -> Result<HeadLoss> {
    let (n, k, h, w) = logits.dims4();
    let plane = h * w;
    if targets.len() != n * plane {
        return Err(Error::shape(
            "classification_loss",
            format!("{} targets for logits {:?}", targets.len(), logits.shape()),
        ));
    }
    if let Some(bad) = targets.iter().find(|&&t| t >= k && t != ignore_index) {
        return Err(Error::Config(format!("target bin {bad} outside 0..{k}")));
    }
    let n_valid = targets.iter().filter(|&&t| t != ignore_index).count();
    let mut grad = Tensor::zeros(logits.shape());
    if n_valid == 0 {
        return Ok(HeadLoss { loss: 0.0, grad, n_valid });
    }
    let probs = softmax_probs(logits)?;
    let norm = n_valid as f64;
    let mut loss = 0.0;
    let g = grad.data_mut();
    for b in 0..n {
        for p in 0..plane {
            let t = targets[b * plane + p];
            if t == ignore_index {
                continue;
            }
            let at = |c: usize| (b * k + c) * plane + p;
            // log P_t computed from the logits directly stays finite for
            // saturated softmax.
            let x = logits.data();
            let max = (0..k).map(|c| x[at(c)]).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + (0..k).map(|c| (x[at(c)] - max).exp()).sum::<f64>().ln();
            loss += lambda * (lse - x[at(t)]);
            for c in 0..k {
                let onehot = if c == t { 1.0 } else { 0.0 };
                g[at(c)] = lambda * (probs.data()[at(c)] - onehot) / norm;
            }
        }
    }
    Ok(HeadLoss {
        loss: loss / norm,
        grad,
        n_valid,
    })
}

/// Scalar knobs of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Multiplies every regression term.
    pub regression: f64,
    /// Uniform per-pixel weight of the cross-entropy terms.
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            regression: 1.0,
            lambda: 1.0,
        }
    }
}

/// Loss components of one forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Sum of the squared log-depth terms.
    pub loss_r: f64,
    /// Sum of the cross-entropy terms.
    pub loss_c: f64,
    pub total: f64,
    /// Valid pixels behind the regression terms (0 flags an empty map).
    pub n_r: usize,
    /// Valid pixels behind the cross-entropy terms.
    pub n_c: usize,
}

impl LossReport {
    fn add_r(&mut self, l: &HeadLoss, weight: f64) {
        self.loss_r += weight * l.loss;
        self.n_r += l.n_valid;
        self.total = self.loss_r + self.loss_c;
    }

    fn add_c(&mut self, l: &HeadLoss) {
        self.loss_c += l.loss;
        self.n_c += l.n_valid;
        self.total = self.loss_r + self.loss_c;
    }

    /// Running mean helper: `self += other / n`.
    pub fn accumulate(&mut self, other: &LossReport, n: usize) {
        let s = 1.0 / n as f64;
        self.loss_r += other.loss_r * s;
        self.loss_c += other.loss_c * s;
        self.total = self.loss_r + self.loss_c;
        self.n_r += other.n_r;
        self.n_c += other.n_c;
    }
}

/// Loss of every cascade head present in `cache` and the matching seed
/// gradients for [`ModelState::backward_rccn`]. With [`Scope::Coarse`] only
/// the coarse head is scored.
pub fn joint_loss(
    model: &ModelState,
    cache: &ForwardCache,
    targets: &Targets,
    weights: LossWeights,
    scope: Scope,
) -> Result<(LossReport, LossSeeds)> {
    let variant = model.spec.variant;
    let ignore = model.scheme.ignore_index();
    let mut report = LossReport::default();
    let mut seeds = LossSeeds::default();
    let coarse_target = targets.coarse_log_tensor();

    if let Some(coarse) = &cache.coarse {
        let l = if variant.coarse_is_classifier() {
            let l = classification_loss_weighted(coarse, &targets.coarse_bins, ignore, weights.lambda)?;
            report.add_c(&l);
            l
        } else {
            let mut l = regression_loss(coarse, &coarse_target, &targets.coarse_mask)?;
            report.add_r(&l, weights.regression);
            l.grad.scale(weights.regression);
            l
        };
        seeds.coarse = Some(l.grad);
    }
    if scope == Scope::Full {
        let fine = cache
            .fine
            .as_ref()
            .ok_or_else(|| Error::shape("joint_loss", "cache has no fine head output"))?;
        let l = if variant.fine_is_classifier() {
            let l = classification_loss_weighted(fine, &targets.fine_bins, ignore, weights.lambda)?;
            report.add_c(&l);
            l
        } else {
            let mut l = regression_loss(fine, &coarse_target, &targets.coarse_mask)?;
            report.add_r(&l, weights.regression);
            l.grad.scale(weights.regression);
            l
        };
        seeds.fine = Some(l.grad);
    }
    Ok((report, seeds))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn uniform_logits_give_uniform_probs_and_ln_k() {
        let logits = Tensor::zeros(&[1, 10, 2, 3]);
        let p = softmax_probs(&logits).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.1).abs() < 1e-15));
        let l = classification_loss(&logits, &[3; 6], 10).unwrap();
        assert!((l.loss - 10f64.ln()).abs() < 1e-12);
        assert!((l.loss - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn huge_logits_do_not_overflow() {
        let p = softmax_probs(&t(&[1, 2, 1, 1], &[1000.0, 0.0])).unwrap();
        assert_eq!(p.data(), &[1.0, 0.0]);
        let l = classification_loss(&t(&[1, 2, 1, 1], &[1000.0, 0.0]), &[0], 2).unwrap();
        assert!(l.loss.abs() < 1e-300 && l.grad.max_abs() < 1e-300);
        let l = classification_loss(&t(&[1, 2, 1, 1], &[1000.0, 0.0]), &[1], 2).unwrap();
        assert!((l.loss - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn single_pixel_regression() {
        let l = regression_loss(&t(&[1, 1, 1, 1], &[3.0]), &t(&[1, 1, 1, 1], &[2.0]), &[true]).unwrap();
        assert_eq!(l.loss, 1.0);
        assert_eq!(l.grad.data(), &[2.0]);
    }

    #[test]
    fn masked_pixels_are_ignored() {
        let l = regression_loss(&t(&[1, 1, 1, 2], &[3.0, 100.0]), &t(&[1, 1, 1, 2], &[2.0, 0.0]), &[true, false]).unwrap();
        assert_eq!((l.loss, l.n_valid), (1.0, 1));
        assert_eq!(l.grad.data(), &[2.0, 0.0]);
        let none = regression_loss(&t(&[1, 1, 1, 1], &[3.0]), &t(&[1, 1, 1, 1], &[2.0]), &[false]).unwrap();
        assert_eq!((none.loss, none.n_valid), (0.0, 0));
        let ce = classification_loss(&Tensor::zeros(&[1, 3, 1, 2]), &[3, 3], 3).unwrap();
        assert_eq!((ce.loss, ce.n_valid), (0.0, 0));
    }

    #[test]
    fn softmax_gradient_rows_sum_to_zero() {
        let logits = t(&[1, 3, 1, 2], &[0.3, -1.0, 2.0, 0.1, -0.5, 0.7]);
        let l = classification_loss(&logits, &[0, 2], 3).unwrap();
        for p in 0..2 {
            let s: f64 = (0..3).map(|c| l.grad.data()[c * 2 + p]).sum();
            assert!(s.abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_range_target_rejected() {
        assert!(classification_loss(&Tensor::zeros(&[1, 3, 1, 1]), &[5], 3).is_err());
    }
}
