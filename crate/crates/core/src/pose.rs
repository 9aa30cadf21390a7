//! 137-keypoint 2D pose sequences.
//!
//! Keypoint layout: body 0–24 (OpenPose BODY_25), face 25–94, left hand
//! 95–115, right hand 116–136.

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const NUM_KEYPOINTS: usize = 137;
pub const POSE_DIM: usize = NUM_KEYPOINTS * 2;
pub const NUM_PARTS: usize = 25;
pub const COARSE_DIM: usize = NUM_PARTS * 2;

pub const BODY_KEYPOINTS: usize = 25;
pub const FACE_KEYPOINTS: usize = 70;
pub const HAND_KEYPOINTS: usize = 21;
pub const FACE_START: usize = 25;
pub const LEFT_HAND_START: usize = 95;
pub const RIGHT_HAND_START: usize = 116;

pub const NOSE: usize = 0;
pub const NECK: usize = 1;
pub const R_SHOULDER: usize = 2;
pub const R_ELBOW: usize = 3;
pub const R_WRIST: usize = 4;
pub const L_SHOULDER: usize = 5;
pub const L_ELBOW: usize = 6;
pub const L_WRIST: usize = 7;

pub const DEFAULT_FPS: u32 = 25;

/// `frames × 137 × (x, y)` coordinates plus per-keypoint confidence, both
/// stored frame-major and flat.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence<T = f64> {
    pub coords: Vec<T>,
    pub confidence: Vec<T>,
    pub fps: u32,
}

impl<T: Scalar> PoseSequence<T> {
    pub fn new(coords: Vec<T>, confidence: Vec<T>, fps: u32) -> Result<Self> {
        if !coords.len().is_multiple_of(POSE_DIM) || confidence.len() * 2 != coords.len() {
            return Err(Error::InvalidArgument(format!(
                "pose buffers of {} coordinates and {} confidences do not describe whole frames",
                coords.len(),
                confidence.len()
            )));
        }
        Ok(Self {
            coords,
            confidence,
            fps,
        })
    }

    /// Every keypoint fully confident.
    pub fn from_coords(coords: Vec<T>) -> Result<Self> {
        let n = coords.len() / 2;
        Self::new(coords, vec![T::one(); n], DEFAULT_FPS)
    }

    pub fn frames(&self) -> usize {
        self.coords.len() / POSE_DIM
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[T] {
        &self.coords[t * POSE_DIM..(t + 1) * POSE_DIM]
    }

    pub fn frame_confidence(&self, t: usize) -> &[T] {
        &self.confidence[t * NUM_KEYPOINTS..(t + 1) * NUM_KEYPOINTS]
    }

    pub fn point(&self, t: usize, k: usize) -> (T, T) {
        let base = t * POSE_DIM + 2 * k;
        (self.coords[base], self.coords[base + 1])
    }

    /// Keeps the listed frames in the given order.
    pub fn select_frames(&self, keep: &[usize]) -> Self {
        let mut coords = Vec::with_capacity(keep.len() * POSE_DIM);
        let mut confidence = Vec::with_capacity(keep.len() * NUM_KEYPOINTS);
        for &t in keep {
            coords.extend_from_slice(self.frame(t));
            confidence.extend_from_slice(self.frame_confidence(t));
        }
        Self {
            coords,
            confidence,
            fps: self.fps,
        }
    }

    /// `[frames, 274]` constant tensor.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(self.coords.clone(), &[self.frames(), POSE_DIM]).expect("whole frames")
    }

    pub fn cast<U: Scalar>(&self) -> PoseSequence<U> {
        let conv = |v: &T| U::lit(v.to_f64_lossy());
        PoseSequence {
            coords: self.coords.iter().map(conv).collect(),
            confidence: self.confidence.iter().map(conv).collect(),
            fps: self.fps,
        }
    }
}

/// `frames × 25 × (x, y)`, flat.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarsePoseSequence<T = f64> {
    pub coords: Vec<T>,
}

impl<T: Scalar> CoarsePoseSequence<T> {
    pub fn frames(&self) -> usize {
        self.coords.len() / COARSE_DIM
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(self.coords.clone(), &[self.frames(), COARSE_DIM]).expect("whole frames")
    }
}

/// Replicates `p0` (274 values) `frames` times.
pub fn init_pose_sequence<T: Scalar>(p0: &[T], frames: usize) -> Result<Vec<T>> {
    if p0.len() != POSE_DIM {
        return Err(Error::shape("init_pose_sequence", &[p0.len()], &[POSE_DIM]));
    }
    if frames == 0 {
        return Err(Error::InvalidArgument("pose sequence needs at least one frame".into()));
    }
    Ok(p0.repeat(frames))
}
