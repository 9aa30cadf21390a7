use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{PoseSequence, L_SHOULDER, NECK, R_SHOULDER};

/// Affine map from pixels to the normalized frame:
/// `p_norm = (p − origin) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub origin_x: f64,
    pub origin_y: f64,
    pub scale: f64,
}

impl NormalizationRecord {
    pub const IDENTITY: Self = Self {
        origin_x: 0.0,
        origin_y: 0.0,
        scale: 1.0,
    };
}

/// Reference frame: the first frame whose neck and shoulders are all
/// detected, else frame 0.
fn reference_frame(pose: &PoseSequence<f64>) -> usize {
    (0..pose.frames())
        .find(|&t| {
            let c = pose.frame_confidence(t);
            c[NECK] > 0.0 && c[R_SHOULDER] > 0.0 && c[L_SHOULDER] > 0.0
        })
        .unwrap_or(0)
}

/// Neck-centred, shoulder-span-scaled copy of `pose`. One transform is used
/// for the whole sequence so motion is preserved.
pub fn normalize_pose(pose: &PoseSequence<f64>) -> Result<(PoseSequence<f64>, NormalizationRecord)> {
    if pose.is_empty() {
        return Err(Error::Dataset("cannot normalize an empty pose".into()));
    }
    let t = reference_frame(pose);
    let (nx, ny) = pose.point(t, NECK);
    let (rx, ry) = pose.point(t, R_SHOULDER);
    let (lx, ly) = pose.point(t, L_SHOULDER);
    let span = (rx - lx).hypot(ry - ly);
    if !(span > 1e-9) || !span.is_finite() {
        return Err(Error::Dataset(format!(
            "shoulder span {span} in frame {t} is too small to normalize"
        )));
    }
    let record = NormalizationRecord {
        origin_x: nx,
        origin_y: ny,
        scale: span,
    };
    Ok((apply(pose, |x, y| ((x - nx) / span, (y - ny) / span)), record))
}

pub fn denormalize_pose(pose: &PoseSequence<f64>, record: &NormalizationRecord) -> PoseSequence<f64> {
    let NormalizationRecord {
        origin_x,
        origin_y,
        scale,
    } = *record;
    apply(pose, |x, y| (x * scale + origin_x, y * scale + origin_y))
}

fn apply(pose: &PoseSequence<f64>, f: impl Fn(f64, f64) -> (f64, f64)) -> PoseSequence<f64> {
    let mut coords = Vec::with_capacity(pose.coords.len());
    for xy in pose.coords.chunks_exact(2) {
        let (x, y) = f(xy[0], xy[1]);
        coords.extend([x, y]);
    }
    PoseSequence {
        coords,
        confidence: pose.confidence.clone(),
        fps: pose.fps,
    }
}
