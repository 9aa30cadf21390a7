use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::pose::{NUM_KEYPOINTS, POSE_DIM};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_len: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_len: 2e-5 }
    }
}

/// `(1/N) Σ_j (1/K) Σ_i c_i[j] · ‖s_i[j] − ŝ_i[j]‖²` over `[N, 274]` poses.
pub fn masked_mse<T: Scalar>(s: &Tensor<T>, s_hat: &Tensor<T>, conf: &[T]) -> Result<Tensor<T>> {
    if s.shape() != s_hat.shape() {
        return Err(Error::shape("masked_mse", s.shape(), s_hat.shape()));
    }
    let [frames, dim] = *s.shape() else {
        return Err(Error::shape("masked_mse", s.shape(), &[0, POSE_DIM]));
    };
    if dim != POSE_DIM || conf.len() != frames * NUM_KEYPOINTS {
        return Err(Error::shape("masked_mse", s.shape(), &[conf.len() / NUM_KEYPOINTS, POSE_DIM]));
    }
    let norm = T::one() / T::from_usize_lossy(frames * NUM_KEYPOINTS);
    let weights: Vec<T> = conf.iter().flat_map(|&c| [c * norm, c * norm]).collect();
    Ok(s_hat.sub(s)?.square().mul(&Tensor::new(weights, &[frames, POSE_DIM])?)?.sum())
}

/// Step sizes `δ_t = t / T` for `t = 1..=T`.
pub fn interp_deltas(steps: usize) -> Vec<f64> {
    (1..=steps).map(|t| t as f64 / steps as f64).collect()
}

/// `s_t = δ_t·s0 + (1 − δ_t)·s_{t−1}` for `t = 1..=T`, starting from
/// `anchor` at index 0. Returns `[s_1, …, s_T]`; `s_T == s0`.
pub fn interp_targets_from<T: Scalar>(s0: &[T], anchor: &[T], steps: usize) -> Result<Vec<Vec<T>>> {
    if s0.len() != anchor.len() {
        return Err(Error::shape("interp_targets", &[s0.len()], &[anchor.len()]));
    }
    let mut prev = anchor.to_vec();
    let mut out = Vec::with_capacity(steps);
    for delta in interp_deltas(steps) {
        let d = T::lit(delta);
        let next: Vec<T> = if delta == 1.0 {
            s0.to_vec()
        } else {
            s0.iter().zip(&prev).map(|(&g, &p)| d * g + (T::one() - d) * p).collect()
        };
        out.push(next.clone());
        prev = next;
    }
    Ok(out)
}

/// Targets anchored at the ground truth itself, so every target equals `s0`.
pub fn interp_targets<T: Scalar>(s0: &[T], steps: usize) -> Vec<Vec<T>> {
    interp_targets_from(s0, s0, steps).expect("same length")
}

/// `ln(T)² · Σ_t masked_mse(s_t, ŝ_t, conf)`.
pub fn loss_refinement<T: Scalar>(
    targets: &[Tensor<T>],
    preds: &[Tensor<T>],
    conf: &[T],
    steps: usize,
) -> Result<Tensor<T>> {
    if targets.len() != steps || preds.len() != steps {
        return Err(Error::InvalidArgument(format!(
            "refinement loss needs {steps} targets and predictions, got {} and {}",
            targets.len(),
            preds.len()
        )));
    }
    let mut total: Option<Tensor<T>> = None;
    for (s, p) in targets.iter().zip(preds) {
        let term = masked_mse(s, p, conf)?;
        total = Some(match total {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
    }
    let ln_t = (steps as f64).ln();
    Ok(total.expect("steps >= 1").scale(T::lit(ln_t * ln_t)))
}

/// `Σ_t mean((coarse_t − gt)²)`.
pub fn loss_coarse<T: Scalar>(preds: &[Tensor<T>], gt: &Tensor<T>, multiscale: bool) -> Result<Tensor<T>> {
    if !multiscale {
        return Err(Error::InvalidArgument(
            "coarse loss requested with the coarse pathway disabled".into(),
        ));
    }
    let mut total: Option<Tensor<T>> = None;
    for p in preds {
        let term = p.sub(gt)?.square().mean()?;
        total = Some(match total {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::InvalidArgument("no coarse predictions".into()))
}

/// `λ · mean((pred − gt)²)` over a batch of raw length predictions.
pub fn loss_length<T: Scalar>(pred_raw: &Tensor<T>, gt_frames: &[usize], w: &LossWeights) -> Result<Tensor<T>> {
    if pred_raw.numel() != gt_frames.len() || gt_frames.is_empty() {
        return Err(Error::shape("loss_length", pred_raw.shape(), &[gt_frames.len()]));
    }
    if gt_frames.contains(&0) {
        return Err(Error::InvalidArgument("ground-truth length must be positive".into()));
    }
    let gt: Vec<T> = gt_frames.iter().map(|&g| T::from_usize_lossy(g)).collect();
    let gt = Tensor::new(gt, pred_raw.shape())?;
    Ok(pred_raw.sub(&gt)?.square().mean()?.scale(T::lit(w.lambda_len)))
}

#[derive(Debug, Clone)]
pub struct LossParts<T: Scalar> {
    pub refinement: Tensor<T>,
    pub length: Tensor<T>,
    /// `None` with the coarse pathway disabled.
    pub coarse: Option<Tensor<T>>,
}

pub fn total_loss<T: Scalar>(parts: &LossParts<T>) -> Result<Tensor<T>> {
    let sum = parts.refinement.add(&parts.length)?;
    match &parts.coarse {
        Some(c) => sum.add(c),
        None => Ok(sum),
    }
}
