//! Alignment-based pose metrics, retrieval ranks, length errors, parameter
//! accounting and timing.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DatasetTag;
use crate::encoder::{finalize_length, LengthBounds};
use crate::error::{Error, Result};
use crate::model::SignModel;
use crate::nn::Parameterized;
use crate::pose::{PoseSequence, NUM_KEYPOINTS, POSE_DIM};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtwResult {
    /// `accumulated / path_length`.
    pub distance: f64,
    pub accumulated: f64,
    pub path: Vec<(usize, usize)>,
    pub path_length: usize,
}

/// Classic DTW over a row-major `n × m` cost matrix with steps
/// `(1,0)`, `(0,1)`, `(1,1)`. Ties while backtracking prefer the diagonal,
/// then `(1,0)`.
pub fn dtw_from_costs(cost: &[f64], n: usize, m: usize) -> Result<DtwResult> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("DTW needs non-empty sequences".into()));
    }
    if cost.len() != n * m {
        return Err(Error::shape("dtw", &[cost.len()], &[n, m]));
    }
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { f64::INFINITY };
                let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[i * m + j] = best + cost[i * m + j];
        }
    }
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { f64::INFINITY };
        let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
        let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();
    let accumulated = acc[n * m - 1];
    Ok(DtwResult {
        distance: accumulated / path.len() as f64,
        accumulated,
        path_length: path.len(),
        path,
    })
}

fn pairwise_costs<T: Scalar>(
    a: &PoseSequence<T>,
    b: &PoseSequence<T>,
    frame_cost: impl Fn(&[T], &[T], usize) -> f64 + Sync,
) -> Result<(Vec<f64>, usize, usize)> {
    let (n, m) = (a.frames(), b.frames());
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("DTW needs non-empty sequences".into()));
    }
    let mut cost = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            cost.push(frame_cost(a.frame(i), b.frame(j), j));
        }
    }
    Ok((cost, n, m))
}

/// Mean Euclidean keypoint error over all 137 keypoints.
pub fn frame_error<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let mut s = 0.0;
    for k in 0..NUM_KEYPOINTS {
        let dx = (a[2 * k] - b[2 * k]).to_f64_lossy();
        let dy = (a[2 * k + 1] - b[2 * k + 1]).to_f64_lossy();
        s += dx.hypot(dy);
    }
    s / NUM_KEYPOINTS as f64
}

pub fn dtw_mje<T: Scalar>(a: &PoseSequence<T>, b: &PoseSequence<T>) -> Result<DtwResult> {
    let (cost, n, m) = pairwise_costs(a, b, |fa, fb, _| frame_error(fa, fb))?;
    dtw_from_costs(&cost, n, m)
}

/// DTW-MJE with keypoints that are undetected in the reference `b`
/// contributing no error. The per-frame error keeps the fixed 1/137
/// normalization, so masking a keypoint can only lower a frame's cost.
pub fn ndtw_mje<T: Scalar>(a: &PoseSequence<T>, b: &PoseSequence<T>) -> Result<DtwResult> {
    let (cost, n, m) = pairwise_costs(a, b, |fa, fb, j| {
        let conf = b.frame_confidence(j);
        let mut s = 0.0;
        for k in 0..NUM_KEYPOINTS {
            if conf[k] > T::zero() {
                let dx = (fa[2 * k] - fb[2 * k]).to_f64_lossy();
                let dy = (fa[2 * k + 1] - fb[2 * k + 1]).to_f64_lossy();
                s += dx.hypot(dy);
            }
        }
        s / NUM_KEYPOINTS as f64
    })?;
    dtw_from_costs(&cost, n, m)
}

/// `dist[i][j] = dtw_mje(preds[i], labels[j]).distance`, computed in parallel.
pub fn distance_matrix<T: Scalar>(preds: &[PoseSequence<T>], labels: &[PoseSequence<T>]) -> Result<Vec<Vec<f64>>> {
    preds
        .par_iter()
        .map(|p| {
            labels
                .iter()
                .map(|l| dtw_mje(p, l).map(|r| r.distance))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    pub ks: Vec<usize>,
    /// Fraction of predictions whose own label is among the K nearest labels.
    pub pred_to_label: Vec<f64>,
    /// Fraction of labels whose own prediction is among the K nearest predictions.
    pub label_to_pred: Vec<f64>,
}

/// Top-K retrieval accuracies from a square distance matrix whose diagonal
/// holds the matching pairs. Ties are broken by index.
pub fn rank_from_matrix(dist: &[Vec<f64>], ks: &[usize]) -> Result<RankResult> {
    let n = dist.len();
    if n == 0 || dist.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidArgument("rank needs a non-empty square distance matrix".into()));
    }
    let rank_of = |target: usize, d: &dyn Fn(usize) -> f64| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| d(a).total_cmp(&d(b)).then(a.cmp(&b)));
        idx.iter().position(|&x| x == target).expect("target present")
    };
    let pred_ranks: Vec<usize> = (0..n).map(|i| rank_of(i, &|j| dist[i][j])).collect();
    let label_ranks: Vec<usize> = (0..n).map(|j| rank_of(j, &|i| dist[i][j])).collect();
    let acc = |ranks: &[usize], k: usize| ranks.iter().filter(|&&r| r < k).count() as f64 / n as f64;
    Ok(RankResult {
        ks: ks.to_vec(),
        pred_to_label: ks.iter().map(|&k| acc(&pred_ranks, k)).collect(),
        label_to_pred: ks.iter().map(|&k| acc(&label_ranks, k)).collect(),
    })
}

pub const RANK_KS: [usize; 3] = [1, 5, 10];

pub fn distance_rank<T: Scalar>(preds: &[PoseSequence<T>], labels: &[PoseSequence<T>]) -> Result<RankResult> {
    if preds.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    rank_from_matrix(&distance_matrix(preds, labels)?, &RANK_KS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthErrors {
    pub count: usize,
    pub mae_raw: f64,
    pub mse_raw: f64,
    pub mae_clipped: f64,
    pub mse_clipped: f64,
}

impl LengthErrors {
    /// `final_preds` are the rounded and clipped lengths actually generated.
    pub fn compute(raw_preds: &[f64], final_preds: &[usize], gts: &[usize]) -> Result<Self> {
        if raw_preds.len() != gts.len() || final_preds.len() != gts.len() {
            return Err(Error::InvalidArgument("length metric inputs differ in size".into()));
        }
        let n = gts.len();
        if n == 0 {
            return Ok(Self {
                count: 0,
                mae_raw: 0.0,
                mse_raw: 0.0,
                mae_clipped: 0.0,
                mse_clipped: 0.0,
            });
        }
        let stats = |errs: Vec<f64>| {
            let mae = errs.iter().map(|e| e.abs()).sum::<f64>() / n as f64;
            let mse = errs.iter().map(|e| e * e).sum::<f64>() / n as f64;
            (mae, mse)
        };
        let (mae_raw, mse_raw) = stats(raw_preds.iter().zip(gts).map(|(p, &g)| p - g as f64).collect());
        let (mae_clipped, mse_clipped) =
            stats(final_preds.iter().zip(gts).map(|(&p, &g)| p as f64 - g as f64).collect());
        Ok(Self {
            count: n,
            mae_raw,
            mse_raw,
            mae_clipped,
            mse_clipped,
        })
    }
}

/// Per-dataset and overall (`None`) length errors. Clipped predictions are
/// derived from the raw ones with `finalize_length`.
pub fn length_metrics(
    items: &[(DatasetTag, f64, usize)],
    bounds: LengthBounds,
) -> Result<Vec<(Option<DatasetTag>, LengthErrors)>> {
    let mut groups: BTreeMap<DatasetTag, Vec<(f64, usize)>> = BTreeMap::new();
    for &(tag, raw, gt) in items {
        groups.entry(tag).or_default().push((raw, gt));
    }
    let summarize = |rows: &[(f64, usize)]| {
        let raw: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let fin: Vec<usize> = raw.iter().map(|&r| finalize_length(r, bounds)).collect();
        let gts: Vec<usize> = rows.iter().map(|r| r.1).collect();
        LengthErrors::compute(&raw, &fin, &gts)
    };
    let mut out = Vec::with_capacity(groups.len() + 1);
    for (tag, rows) in &groups {
        out.push((Some(*tag), summarize(rows)?));
    }
    let all: Vec<(f64, usize)> = items.iter().map(|&(_, r, g)| (r, g)).collect();
    out.push((None, summarize(&all)?));
    Ok(out)
}

/// Counts grouped like [`crate::model::ModelConfig::param_breakdown`].
pub fn count_params<T: Scalar>(model: &SignModel<T>) -> Vec<(String, usize)> {
    let mut groups: Vec<(String, usize)> = Vec::new();
    for (name, t) in model.named_params() {
        let parts: Vec<&str> = name.split('.').collect();
        let key = match (parts[0], parts.get(1).copied().unwrap_or("")) {
            ("generator", "step_table" | "step_f1" | "step_f2") => "generator.step".to_string(),
            ("generator", "coarse_f1" | "coarse_f2") => "generator.coarse_head".to_string(),
            ("generator", "fine_g1" | "fine_g2") => "generator.fine_head".to_string(),
            (a, b) => format!("{a}.{b}"),
        };
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, n)) => *n += t.numel(),
            None => groups.push((key, t.numel())),
        }
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub median_seconds: f64,
    pub samples: Vec<f64>,
}

/// Median wall-clock over `reps` timed runs after `warmup` untimed ones.
pub fn time_repeated(warmup: usize, reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<Timing> {
    if reps == 0 {
        return Err(Error::InvalidArgument("benchmark needs at least one repetition".into()));
    }
    for _ in 0..warmup {
        f()?;
    }
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        f()?;
        samples.push(start.elapsed().as_secs_f64());
    }
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if reps % 2 == 1 {
        sorted[reps / 2]
    } else {
        0.5 * (sorted[reps / 2 - 1] + sorted[reps / 2])
    };
    Ok(Timing {
        median_seconds: median,
        samples,
    })
}

/// One benchmark item: tokens, first frame and frame count.
pub struct BenchItem<'a, T> {
    pub tokens: &'a [usize],
    pub first_frame: &'a [T],
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub batch_size: usize,
    /// Inference over the whole batch.
    pub inference_ms: f64,
    /// Forward and backward over the batch, the per-epoch cost when the
    /// batch is the training set.
    pub seconds_per_epoch: f64,
}

pub fn benchmark<T: Scalar>(model: &SignModel<T>, batch: &[BenchItem<'_, T>], reps: usize) -> Result<Benchmark> {
    let reps = reps.max(5);
    let infer = time_repeated(1, reps, || {
        for item in batch {
            model.reconstruct(item.tokens, item.first_frame, item.frames)?;
        }
        Ok(())
    })?;
    let params = model.params();
    let train = time_repeated(1, reps, || {
        for item in batch {
            let r = model.reconstruct(item.tokens, item.first_frame, item.frames)?;
            r.output.square().mean()?.backward()?;
        }
        for p in &params {
            p.clear_grad();
        }
        Ok(())
    })?;
    Ok(Benchmark {
        batch_size: batch.len(),
        inference_ms: infer.median_seconds * 1e3,
        seconds_per_epoch: train.median_seconds,
    })
}

/// Mean DTW-MJE of reconstructions (ground-truth length and first frame).
pub fn reconstruction_dtw<T: Scalar>(
    model: &SignModel<T>,
    items: &[(Vec<usize>, PoseSequence<T>)],
) -> Result<f64> {
    reconstruction_error(model, items, dtw_mje)
}

/// Like [`reconstruction_dtw`], with keypoints undetected in the ground
/// truth excluded.
pub fn reconstruction_ndtw<T: Scalar>(
    model: &SignModel<T>,
    items: &[(Vec<usize>, PoseSequence<T>)],
) -> Result<f64> {
    reconstruction_error(model, items, ndtw_mje)
}

fn reconstruction_error<T: Scalar>(
    model: &SignModel<T>,
    items: &[(Vec<usize>, PoseSequence<T>)],
    metric: fn(&PoseSequence<T>, &PoseSequence<T>) -> Result<DtwResult>,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("no sequences to evaluate".into()));
    }
    let mut total = 0.0;
    for (tokens, gt) in items {
        let r = model.reconstruct(tokens, &gt.frame(0)[..POSE_DIM], gt.frames())?;
        let pred = PoseSequence::from_coords(r.output.to_vec())?;
        total += metric(&pred, gt)?.distance;
    }
    Ok(total / items.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;
    use rand::Rng;

    fn random_seq(rng: &mut crate::numerics::Rng64, frames: usize) -> PoseSequence<f64> {
        let coords = (0..frames * POSE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        PoseSequence::from_coords(coords).unwrap()
    }

    #[test]
    fn identical_sequences() {
        let mut rng = seeded_rng(1);
        let a = random_seq(&mut rng, 4);
        let r = dtw_mje(&a, &a).unwrap();
        assert_eq!(r.distance, 0.0);
        assert_eq!(r.path, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn single_offset_keypoint() {
        let a = PoseSequence::from_coords(vec![0.0; POSE_DIM]).unwrap();
        let mut bc = vec![0.0; POSE_DIM];
        bc[20] = 3.0;
        bc[21] = 4.0;
        let mut b = PoseSequence::from_coords(bc).unwrap();
        assert!((dtw_mje(&a, &b).unwrap().distance - 5.0 / 137.0).abs() < 1e-15);
        assert!((ndtw_mje(&a, &b).unwrap().distance - 5.0 / 137.0).abs() < 1e-15);
        b.confidence[10] = 0.0;
        assert_eq!(ndtw_mje(&a, &b).unwrap().distance, 0.0);
        assert!(dtw_mje(&a, &PoseSequence::from_coords(vec![]).unwrap()).is_err());
    }

    #[test]
    fn path_is_valid() {
        let mut rng = seeded_rng(2);
        let a = random_seq(&mut rng, 5);
        let b = random_seq(&mut rng, 3);
        let r = dtw_mje(&a, &b).unwrap();
        assert_eq!(r.path[0], (0, 0));
        assert_eq!(*r.path.last().unwrap(), (4, 2));
        for w in r.path.windows(2) {
            let step = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            assert!(matches!(step, (1, 0) | (0, 1) | (1, 1)));
        }
        assert_eq!(r.path_length, r.path.len());
    }

    #[test]
    fn rank_toy_matrix() {
        // Pred 0 is nearest to label 0; pred 1 is nearer to label 0 than to
        // label 1; pred 2 is farthest from its own label.
        let d = vec![
            vec![0.1, 0.5, 0.9],
            vec![0.2, 0.3, 0.8],
            vec![0.4, 0.6, 0.7],
        ];
        let r = rank_from_matrix(&d, &[1, 2, 3]).unwrap();
        assert_eq!(r.pred_to_label, vec![1.0 / 3.0, 2.0 / 3.0, 1.0]);
        // Label 0: preds ordered 0,1,2 → rank 0. Label 1: 1,0,2 → rank 0.
        // Label 2: 2,1,0 → rank 0.
        assert_eq!(r.label_to_pred, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn self_retrieval_is_perfect() {
        let mut rng = seeded_rng(3);
        let seqs: Vec<PoseSequence<f64>> = (0..6).map(|i| random_seq(&mut rng, 2 + i % 3)).collect();
        let r = distance_rank(&seqs, &seqs).unwrap();
        assert_eq!(r.pred_to_label[0], 1.0);
        assert_eq!(r.label_to_pred[0], 1.0);
        assert!(r.pred_to_label.windows(2).all(|w| w[0] <= w[1]));
        assert!(distance_rank(&seqs, &seqs[1..]).is_err());
    }

    #[test]
    fn length_error_examples() {
        let e = LengthErrors::compute(&[60.0, 80.0], &[60, 80], &[50, 50]).unwrap();
        assert_eq!((e.mae_raw, e.mse_raw), (20.0, 500.0));
        let e = LengthErrors::compute(&[50.0, 20.0], &[50, 20], &[50, 20]).unwrap();
        assert_eq!((e.mae_raw, e.mse_raw, e.mae_clipped, e.mse_clipped), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn grouped_length_metrics_use_clipping() {
        let items = [
            (DatasetTag::Pjm, 250.0, 200),
            (DatasetTag::Dgs, 10.4, 20),
            (DatasetTag::Dgs, 30.6, 30),
        ];
        let rows = length_metrics(&items, LengthBounds::default()).unwrap();
        assert_eq!(rows.len(), 3);
        let (tag, pjm) = &rows[0];
        assert_eq!(*tag, Some(DatasetTag::Pjm));
        assert_eq!((pjm.mae_raw, pjm.mae_clipped), (50.0, 0.0));
        let (_, dgs) = &rows[1];
        assert!((dgs.mae_clipped - 0.5).abs() < 1e-12);
        assert_eq!(rows[2].0, None);
        assert_eq!(rows[2].1.count, 3);
    }

    #[test]
    fn timing_reports_median() {
        let t = time_repeated(1, 5, || Ok(())).unwrap();
        assert_eq!(t.samples.len(), 5);
        assert!(t.median_seconds < 1e-2);
        assert!(time_repeated(0, 0, || Ok(())).is_err());
    }
}
