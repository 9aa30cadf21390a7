use std::path::Path;

use crate::error::{Error, Result};
use crate::pose::{CoarsePoseSequence, PoseSequence, NUM_KEYPOINTS, NUM_PARTS, POSE_DIM};
use crate::scalar::Scalar;

const DEFAULT_GROUPING: &str = include_str!("../../assets/part_grouping.json");

/// 25 named keypoint groups whose mean positions form the coarse pose.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartGrouping {
    parts: Vec<(String, Vec<usize>)>,
}

impl PartGrouping {
    pub fn new(parts: Vec<(String, Vec<usize>)>) -> Result<Self> {
        if parts.len() != NUM_PARTS {
            return Err(Error::Dataset(format!(
                "grouping must have {NUM_PARTS} parts, found {}",
                parts.len()
            )));
        }
        for (name, members) in &parts {
            if members.is_empty() {
                return Err(Error::Dataset(format!("part {name:?} has no keypoints")));
            }
            if let Some(&bad) = members.iter().find(|&&k| k >= NUM_KEYPOINTS) {
                return Err(Error::Dataset(format!(
                    "part {name:?} references keypoint {bad}, valid range is 0..{NUM_KEYPOINTS}"
                )));
            }
        }
        Ok(Self { parts })
    }

    /// `{"part_name": [indices], ...}`; key order is part order.
    pub fn from_json(text: &str) -> Result<Self> {
        let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(text)?;
        let parts = map
            .into_iter()
            .map(|(name, v)| {
                let members: Vec<usize> = serde_json::from_value(v)
                    .map_err(|e| Error::Dataset(format!("part {name:?}: {e}")))?;
                Ok((name, members))
            })
            .collect::<Result<_>>()?;
        Self::new(parts)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::data(path, e.to_string()))?;
        Self::from_json(&text).map_err(|e| Error::data(path, e.to_string()))
    }

    pub fn parts(&self) -> &[(String, Vec<usize>)] {
        &self.parts
    }

    pub fn to_json(&self) -> String {
        let map: serde_json::Map<String, serde_json::Value> = self
            .parts
            .iter()
            .map(|(n, m)| (n.clone(), serde_json::json!(m)))
            .collect();
        serde_json::to_string_pretty(&map).expect("plain JSON values")
    }

    /// Mean-pools the `[x, y]` of each part in one flat frame.
    pub fn pool_frame<T: Scalar>(&self, frame: &[T], out: &mut Vec<T>) {
        for (_, members) in &self.parts {
            let n = T::from_usize_lossy(members.len());
            let (mut x, mut y) = (T::zero(), T::zero());
            for &k in members {
                x += frame[2 * k];
                y += frame[2 * k + 1];
            }
            out.push(x / n);
            out.push(y / n);
        }
    }

    /// Coarse targets for a flat `[frames × 274]` buffer.
    pub fn pool<T: Scalar>(&self, coords: &[T]) -> Vec<T> {
        let frames = coords.len() / POSE_DIM;
        let mut out = Vec::with_capacity(frames * 2 * NUM_PARTS);
        for frame in coords.chunks_exact(POSE_DIM) {
            self.pool_frame(frame, &mut out);
        }
        out
    }
}

impl Default for PartGrouping {
    fn default() -> Self {
        Self::from_json(DEFAULT_GROUPING).expect("bundled grouping is valid")
    }
}

pub fn extract_coarse_gt<T: Scalar>(pose: &PoseSequence<T>, grouping: &PartGrouping) -> CoarsePoseSequence<T> {
    CoarsePoseSequence {
        coords: grouping.pool(&pose.coords),
    }
}
