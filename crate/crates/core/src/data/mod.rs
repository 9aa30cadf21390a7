//! Pose-file ingestion, frame filtering, coarse targets, normalization and
//! complexity stratification.

mod complexity;
mod grouping;
mod manifest;
mod normalize;
mod posefile;
pub mod synthetic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{PoseSequence, FACE_KEYPOINTS, FACE_START, L_WRIST, R_WRIST};

pub use complexity::{complexity_score, stratify, Bucket, ComplexityStats, Stratified};
pub use grouping::{extract_coarse_gt, PartGrouping};
pub use manifest::{read_manifest, write_manifest, ManifestEntry, Split};
pub use normalize::{denormalize_pose, normalize_pose, NormalizationRecord};
pub use posefile::{parse_pose_file, parse_pose_json, pose_file_json, write_pose_file};

/// Default confidence threshold for [`filter_frames`].
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DatasetTag {
    #[serde(rename = "PJM")]
    Pjm,
    #[serde(rename = "DGS")]
    Dgs,
    #[serde(rename = "GSL")]
    Gsl,
    #[serde(rename = "LSF")]
    Lsf,
    #[serde(rename = "synthetic")]
    Synthetic,
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetTag::Pjm => "PJM",
            DatasetTag::Dgs => "DGS",
            DatasetTag::Gsl => "GSL",
            DatasetTag::Lsf => "LSF",
            DatasetTag::Synthetic => "synthetic",
        })
    }
}

impl FromStr for DatasetTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pjm" => Ok(DatasetTag::Pjm),
            "dgs" => Ok(DatasetTag::Dgs),
            "gsl" => Ok(DatasetTag::Gsl),
            "lsf" => Ok(DatasetTag::Lsf),
            "synthetic" => Ok(DatasetTag::Synthetic),
            other => Err(Error::Dataset(format!("unknown dataset tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub hamnosys: String,
    pub pose: PoseSequence<f64>,
    pub dataset_tag: DatasetTag,
}

/// True when a frame passes both the face-confidence and wrist-confidence
/// checks.
pub fn frame_passes(conf: &[f64], c_min: f64) -> bool {
    let face: f64 = conf[FACE_START..FACE_START + FACE_KEYPOINTS].iter().sum();
    let wrists = conf[R_WRIST] + conf[L_WRIST];
    face > c_min * FACE_KEYPOINTS as f64 && wrists > c_min
}

/// Drops frames with low face or wrist confidence, keeping order.
pub fn filter_frames(sample: &Sample, c_min: f64) -> Result<Sample> {
    let keep: Vec<usize> = (0..sample.pose.frames())
        .filter(|&t| frame_passes(sample.pose.frame_confidence(t), c_min))
        .collect();
    if keep.is_empty() {
        return Err(Error::Dataset(format!(
            "sample {}: all {} frames fail the confidence filter",
            sample.id,
            sample.pose.frames()
        )));
    }
    Ok(Sample {
        pose: sample.pose.select_frames(&keep),
        ..sample.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{NUM_KEYPOINTS, POSE_DIM};

    fn sample(confs: Vec<Vec<f64>>) -> Sample {
        let frames = confs.len();
        let coords = (0..frames * POSE_DIM).map(|i| (i / POSE_DIM) as f64).collect();
        Sample {
            id: "s".into(),
            hamnosys: String::new(),
            pose: PoseSequence::new(coords, confs.concat(), 25).unwrap(),
            dataset_tag: DatasetTag::Synthetic,
        }
    }

    #[test]
    fn confident_frames_survive() {
        let s = sample(vec![vec![1.0; NUM_KEYPOINTS]; 3]);
        assert_eq!(filter_frames(&s, 0.2).unwrap().pose.frames(), 3);
    }

    #[test]
    fn blank_face_drops_frame() {
        let mut bad = vec![1.0; NUM_KEYPOINTS];
        bad[FACE_START..FACE_START + FACE_KEYPOINTS].fill(0.0);
        let s = sample(vec![vec![1.0; NUM_KEYPOINTS], bad, vec![1.0; NUM_KEYPOINTS]]);
        let f = filter_frames(&s, 0.2).unwrap();
        assert_eq!(f.pose.frames(), 2);
        assert_eq!(f.pose.frame(1)[0], 2.0);
    }

    #[test]
    fn weak_wrists_drop_frame() {
        let mut bad = vec![1.0; NUM_KEYPOINTS];
        bad[R_WRIST] = 0.05;
        bad[L_WRIST] = 0.05;
        let s = sample(vec![bad.clone(), vec![1.0; NUM_KEYPOINTS]]);
        assert_eq!(filter_frames(&s, 0.2).unwrap().pose.frames(), 1);
        assert!(filter_frames(&sample(vec![bad]), 0.2).is_err());
    }

    #[test]
    fn face_threshold_boundary_is_exclusive() {
        let mut c = vec![1.0; NUM_KEYPOINTS];
        c[FACE_START..FACE_START + FACE_KEYPOINTS].fill(0.25);
        assert!(frame_passes(&c, 0.2));
        c[FACE_START..FACE_START + FACE_KEYPOINTS].fill(0.0);
        c[FACE_START] = 14.0;
        assert!(!frame_passes(&c, 0.2));
    }

    #[test]
    fn filtering_is_idempotent() {
        let mut confs = Vec::new();
        for t in 0..6 {
            let mut c = vec![1.0; NUM_KEYPOINTS];
            if t % 2 == 0 {
                c[R_WRIST] = 0.0;
                c[L_WRIST] = 0.1;
            }
            confs.push(c);
        }
        let once = filter_frames(&sample(confs), 0.2).unwrap();
        let twice = filter_frames(&once, 0.2).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn tags_parse_and_print() {
        for tag in [DatasetTag::Pjm, DatasetTag::Dgs, DatasetTag::Gsl, DatasetTag::Lsf, DatasetTag::Synthetic] {
            assert_eq!(tag.to_string().parse::<DatasetTag>().unwrap(), tag);
        }
        assert!("ASL".parse::<DatasetTag>().is_err());
    }
}
