use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::{DatasetTag, Sample};
use crate::error::{Error, Result};
use crate::pose::{PoseSequence, DEFAULT_FPS, NUM_KEYPOINTS};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPoseFile {
    id: String,
    hamnosys: String,
    #[serde(default)]
    fps: Option<u32>,
    #[serde(default)]
    dataset: Option<String>,
    frames: Vec<Vec<Vec<f64>>>,
}

/// Parses one pose file. `origin` only labels errors.
pub fn parse_pose_json(text: &str, origin: &Path) -> Result<Sample> {
    let raw: RawPoseFile =
        serde_json::from_str(text).map_err(|e| Error::data(origin, e.to_string()))?;
    let dataset_tag = match &raw.dataset {
        Some(tag) => tag.parse().map_err(|e: Error| Error::data(origin, e.to_string()))?,
        None => DatasetTag::Synthetic,
    };
    let mut coords = Vec::with_capacity(raw.frames.len() * NUM_KEYPOINTS * 2);
    let mut confidence = Vec::with_capacity(raw.frames.len() * NUM_KEYPOINTS);
    for (t, frame) in raw.frames.iter().enumerate() {
        if frame.len() != NUM_KEYPOINTS {
            return Err(Error::data(
                origin,
                format!("frame {t}: expected {NUM_KEYPOINTS} keypoints, found {}", frame.len()),
            ));
        }
        for (k, kp) in frame.iter().enumerate() {
            let [x, y, c] = kp[..] else {
                return Err(Error::data(
                    origin,
                    format!("frame {t}, keypoint {k}: expected [x, y, c], found {} values", kp.len()),
                ));
            };
            if !(x.is_finite() && y.is_finite() && (0.0..=1.0).contains(&c)) {
                return Err(Error::data(
                    origin,
                    format!("frame {t}, keypoint {k}: invalid values [{x}, {y}, {c}]"),
                ));
            }
            coords.extend([x, y]);
            confidence.push(c);
        }
    }
    if raw.frames.is_empty() {
        return Err(Error::data(origin, "pose file has no frames"));
    }
    Ok(Sample {
        id: raw.id,
        hamnosys: raw.hamnosys,
        pose: PoseSequence::new(coords, confidence, raw.fps.unwrap_or(DEFAULT_FPS))?,
        dataset_tag,
    })
}

pub fn parse_pose_file(path: &Path) -> Result<Sample> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::data(path, e.to_string()))?;
    parse_pose_json(&text, path)
}

/// Serializes a sample, one frame per line. Floats use the shortest
/// representation that parses back to the same value.
pub fn pose_file_json(sample: &Sample) -> String {
    let header = serde_json::json!({
        "id": sample.id,
        "hamnosys": sample.hamnosys,
        "fps": sample.pose.fps,
        "dataset": sample.dataset_tag.to_string(),
    });
    let header = serde_json::to_string(&header).expect("plain JSON values");
    let mut out = String::with_capacity(sample.pose.frames() * NUM_KEYPOINTS * 24);
    out.push_str(&header[..header.len() - 1]);
    out.push_str(",\"frames\":[\n");
    for t in 0..sample.pose.frames() {
        out.push('[');
        for k in 0..NUM_KEYPOINTS {
            let (x, y) = sample.pose.point(t, k);
            let c = sample.pose.confidence[t * NUM_KEYPOINTS + k];
            if k > 0 {
                out.push(',');
            }
            write!(out, "[{},{},{}]", num(x), num(y), num(c)).expect("string write");
        }
        out.push(']');
        if t + 1 < sample.pose.frames() {
            out.push(',');
        }
        out.push('\n');
    }
    out.push_str("]}\n");
    out
}

fn num(v: f64) -> String {
    serde_json::Number::from_f64(v).map_or_else(|| "null".into(), |n| n.to_string())
}

pub fn write_pose_file(path: &Path, sample: &Sample) -> Result<()> {
    std::fs::write(path, pose_file_json(sample)).map_err(|e| Error::data(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn triplets(n: usize) -> String {
        let kp: Vec<String> = (0..n).map(|i| format!("[{i},{},0.5]", i * 2)).collect();
        format!("[{}]", kp.join(","))
    }

    #[test]
    fn single_frame_defaults_fps() {
        let text = format!(r#"{{"id":"a","hamnosys":"","frames":[{}]}}"#, triplets(137));
        let s = parse_pose_json(&text, Path::new("a.json")).unwrap();
        assert_eq!(s.pose.frames(), 1);
        assert_eq!(s.pose.fps, 25);
        assert_eq!(s.pose.point(0, 3), (3.0, 6.0));
    }

    #[test]
    fn short_frame_names_index_and_path() {
        let text = format!(
            r#"{{"id":"a","hamnosys":"","fps":25,"frames":[{}]}}"#,
            triplets(136)
        );
        let err = parse_pose_json(&text, Path::new("bad.json")).unwrap_err().to_string();
        assert!(err.contains("frame 0") && err.contains("bad.json"), "{err}");
    }

    #[test]
    fn missing_field_and_bad_json() {
        let err = parse_pose_json(r#"{"id":"a","frames":[]}"#, Path::new("m.json"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("hamnosys"), "{err}");
        assert!(parse_pose_json("{", Path::new("x.json")).is_err());
    }

    proptest! {
        #[test]
        fn write_then_parse_is_identity(
            seed in any::<u64>(),
            frames in 1usize..4,
        ) {
            use rand::Rng;
            let mut rng = crate::numerics::seeded_rng(seed);
            let n = frames * NUM_KEYPOINTS;
            let coords: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1e3..1e3)).collect();
            let conf: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let s = Sample {
                id: "p\"q".into(),
                hamnosys: "\u{E000}\u{E001}".into(),
                pose: PoseSequence::new(coords, conf, 30).unwrap(),
                dataset_tag: DatasetTag::Dgs,
            };
            let back = parse_pose_json(&pose_file_json(&s), Path::new("rt.json")).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
