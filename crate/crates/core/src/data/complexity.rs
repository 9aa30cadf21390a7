use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{PoseSequence, NUM_KEYPOINTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Simple,
    Medium,
    Complex,
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bucket::Simple => "simple",
            Bucket::Medium => "medium",
            Bucket::Complex => "complex",
        })
    }
}

/// Raw motion statistics of one sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityStats {
    pub frames: usize,
    /// Mean per-frame keypoint displacement.
    pub energy: f64,
    /// Mean second-order displacement.
    pub jerk: f64,
}

/// Averages `f(k)` over keypoints detected in every frame of `frames`;
/// contributes 0 when none are.
fn masked_mean(pose: &PoseSequence<f64>, frames: &[usize], f: impl Fn(usize) -> f64) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for k in 0..NUM_KEYPOINTS {
        if frames.iter().all(|&t| pose.confidence[t * NUM_KEYPOINTS + k] > 0.0) {
            sum += f(k);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn complexity_score(pose: &PoseSequence<f64>) -> Result<ComplexityStats> {
    let frames = pose.frames();
    if frames < 3 {
        return Err(Error::Dataset(format!(
            "complexity needs at least 3 frames, got {frames}"
        )));
    }
    let energy = (1..frames)
        .map(|t| {
            masked_mean(pose, &[t, t - 1], |k| {
                let (x1, y1) = pose.point(t, k);
                let (x0, y0) = pose.point(t - 1, k);
                (x1 - x0).hypot(y1 - y0)
            })
        })
        .sum::<f64>()
        / (frames - 1) as f64;
    let jerk = (2..frames)
        .map(|t| {
            masked_mean(pose, &[t, t - 1, t - 2], |k| {
                let (x2, y2) = pose.point(t, k);
                let (x1, y1) = pose.point(t - 1, k);
                let (x0, y0) = pose.point(t - 2, k);
                (x2 - 2.0 * x1 + x0).hypot(y2 - 2.0 * y1 + y0)
            })
        })
        .sum::<f64>()
        / (frames - 2) as f64;
    Ok(ComplexityStats {
        frames,
        energy,
        jerk,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratified {
    pub id: String,
    pub stats: ComplexityStats,
    pub score: f64,
    pub bucket: Bucket,
}

/// z-scores with the population standard deviation; a constant column maps
/// to zeros.
fn zscore(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    // Identical inputs can leave rounding residue in the variance.
    if sd > 1e-12 * mean.abs().max(1.0) {
        v.iter().map(|x| (x - mean) / sd).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Tercile buckets of `C = z(ln(1+T)) + z(ln(1+E)) + z(ln(1+J))` within one
/// dataset. Ties in `C` are ordered by id. Output follows input order.
pub fn stratify(items: &[(String, ComplexityStats)]) -> Result<Vec<Stratified>> {
    let n = items.len();
    if n < 3 {
        return Err(Error::Dataset(format!(
            "stratification needs at least 3 samples per dataset, got {n}"
        )));
    }
    let col = |f: fn(&ComplexityStats) -> f64| zscore(&items.iter().map(|(_, s)| f(s).ln_1p()).collect::<Vec<_>>());
    let zt = col(|s| s.frames as f64);
    let ze = col(|s| s.energy);
    let zj = col(|s| s.jerk);
    let scores: Vec<f64> = (0..n).map(|i| zt[i] + ze[i] + zj[i]).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .total_cmp(&scores[b])
            .then_with(|| items[a].0.cmp(&items[b].0))
    });
    let mut buckets = vec![Bucket::Simple; n];
    for (rank, &i) in order.iter().enumerate() {
        buckets[i] = match 3 * rank / n {
            0 => Bucket::Simple,
            1 => Bucket::Medium,
            _ => Bucket::Complex,
        };
    }
    Ok(items
        .iter()
        .zip(scores)
        .zip(buckets)
        .map(|(((id, stats), score), bucket)| Stratified {
            id: id.clone(),
            stats: *stats,
            score,
            bucket,
        })
        .collect())
}
