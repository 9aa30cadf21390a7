//! Losses, the epoch loop, checkpoints and the ablation driver.

pub mod ablation;
pub mod checkpoint;
mod loss;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use loss::{
    interp_deltas, interp_targets, interp_targets_from, loss_coarse, loss_length, loss_refinement,
    masked_mse, total_loss, LossParts, LossWeights,
};

use crate::data::{extract_coarse_gt, normalize_pose, DatasetTag, NormalizationRecord, PartGrouping, Sample};
use crate::error::{Error, Result};
use crate::eval::reconstruction_ndtw;
use crate::generator::TrainRefine;
use crate::hamnosys::Vocabulary;
use crate::model::{ModelConfig, SignModel};
use crate::nn::Parameterized;
use crate::numerics::{adam_step, seeded_rng, AdamConfig, AdamState, Rng64, Tensor};
use crate::pose::{init_pose_sequence, CoarsePoseSequence, PoseSequence, COARSE_DIM, POSE_DIM};
use crate::scalar::Scalar;

/// What index 0 of the target recursion is pinned to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetAnchor {
    /// Ground truth; every interpolated target then equals the ground truth.
    #[default]
    GroundTruth,
    /// The replicated first frame the refinement starts from.
    Initial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub teacher_forcing: f64,
    pub noise_eps: f64,
    pub seed: u64,
    pub target_anchor: TargetAnchor,
    pub loss: LossWeights,
    /// When false the log's `seconds` column is written as 0, so that
    /// repeated runs give identical logs.
    pub record_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 16,
            learning_rate: 1e-3,
            teacher_forcing: 0.5,
            noise_eps: 1e-4,
            seed: 42,
            target_anchor: TargetAnchor::GroundTruth,
            loss: LossWeights::default(),
            record_wall_clock: true,
        }
    }
}

pub const MAX_EPOCHS: usize = 2000;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs > MAX_EPOCHS {
            return bad(format!("epochs {} exceeds {MAX_EPOCHS}", self.epochs));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} is invalid", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.teacher_forcing) {
            return bad(format!("teacher forcing {} not in [0, 1]", self.teacher_forcing));
        }
        if !(self.noise_eps >= 0.0) || !(self.loss.lambda_len >= 0.0) {
            return bad("noise and length weight must be non-negative".into());
        }
        Ok(())
    }
}

/// A sample ready for training: tokenized, normalized, with coarse targets.
#[derive(Debug, Clone)]
pub struct TrainSample<T: Scalar> {
    pub id: String,
    pub dataset_tag: DatasetTag,
    pub tokens: Vec<usize>,
    pub pose: PoseSequence<T>,
    pub coarse: CoarsePoseSequence<T>,
    pub normalization: NormalizationRecord,
}

impl<T: Scalar> TrainSample<T> {
    pub fn prepare(sample: &Sample, vocab: &Vocabulary, grouping: &PartGrouping, max_tokens: usize) -> Result<Self> {
        let tokens = vocab
            .tokenize_bounded(&sample.hamnosys, max_tokens)
            .map_err(|e| Error::Dataset(format!("sample {}: {e}", sample.id)))?;
        let (pose, normalization) = normalize_pose(&sample.pose)
            .map_err(|e| Error::Dataset(format!("sample {}: {e}", sample.id)))?;
        let pose = pose.cast::<T>();
        let coarse = extract_coarse_gt(&pose, grouping);
        Ok(Self {
            id: sample.id.clone(),
            dataset_tag: sample.dataset_tag,
            tokens,
            pose,
            coarse,
            normalization,
        })
    }

    pub fn frames(&self) -> usize {
        self.pose.frames()
    }

    pub fn first_frame(&self) -> &[T] {
        self.pose.frame(0)
    }
}

/// `(tokens, ground truth)` pairs for the reconstruction metrics in
/// [`crate::eval`].
pub fn reconstruction_items<T: Scalar>(samples: &[TrainSample<T>]) -> Vec<(Vec<usize>, PoseSequence<T>)> {
    samples.iter().map(|s| (s.tokens.clone(), s.pose.clone())).collect()
}

/// Per-step refinement targets indexed by generation step: step `t`
/// is supervised by `s_{T−t}`, so the last step (t = 0) sees ground truth.
pub fn step_targets<T: Scalar>(sample: &TrainSample<T>, steps: usize, anchor: TargetAnchor) -> Result<Vec<Tensor<T>>> {
    let gt = &sample.pose.coords;
    let interp = match anchor {
        TargetAnchor::GroundTruth => interp_targets(gt, steps),
        TargetAnchor::Initial => {
            let init = init_pose_sequence(sample.first_frame(), sample.frames())?;
            interp_targets_from(gt, &init, steps)?
        }
    };
    let frames = sample.frames();
    (0..steps)
        .map(|t| Tensor::new(interp[steps - 1 - t].clone(), &[frames, POSE_DIM]))
        .collect()
}

/// Loss components for one sample. With `rng` the pass runs in training
/// mode (dropout, teacher forcing, noise); without it every stochastic
/// element is off.
pub fn forward_loss<T: Scalar>(
    model: &SignModel<T>,
    sample: &TrainSample<T>,
    cfg: &TrainConfig,
    mut rng: Option<&mut Rng64>,
) -> Result<LossParts<T>> {
    let steps = model.config.refinement_steps;
    let frames = sample.frames();
    let targets = step_targets(sample, steps, cfg.target_anchor)?;

    let (h, mask) = model.encode_text(&sample.tokens, rng.as_deref_mut())?;
    let length_raw = model.text.predict_length(&h, &mask)?;
    let train = rng.map(|rng| TrainRefine {
        teacher_forcing: cfg.teacher_forcing,
        noise: cfg.noise_eps,
        targets: &targets,
        rng,
    });
    let r = model
        .generator
        .refine(sample.first_frame(), frames, &h, &mask, train)?;

    let mut preds: Vec<Option<Tensor<T>>> = vec![None; steps];
    let mut coarse = Vec::with_capacity(steps);
    for rec in r.steps {
        if let Some(c) = rec.coarse {
            coarse.push(c);
        }
        preds[rec.step] = Some(rec.estimate);
    }
    let preds: Vec<Tensor<T>> = preds.into_iter().map(|p| p.expect("one record per step")).collect();

    let refinement = loss_refinement(&targets, &preds, &sample.pose.confidence, steps)?;
    let length = loss_length(&length_raw, &[frames], &cfg.loss)?;
    let coarse = if model.config.multiscale {
        let gt = Tensor::new(sample.coarse.coords.clone(), &[frames, COARSE_DIM])?;
        Some(loss_coarse(&coarse, &gt, true)?)
    } else {
        None
    };
    Ok(LossParts {
        refinement,
        length,
        coarse,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_refine: f64,
    pub loss_coarse: f64,
    pub loss_len: f64,
    pub seconds: f64,
    /// Largest coarse-head gradient norm over the epoch's batches.
    pub coarse_grad_norm: f64,
    /// Validation DTW-MJE over keypoints detected in the ground truth.
    pub valid_dtw: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub logs: Vec<EpochLog>,
    /// Epoch whose weights were kept; `None` means the final weights.
    pub best_epoch: Option<usize>,
    pub best_metric: Option<f64>,
}

impl FitReport {
    pub fn final_epoch(&self) -> usize {
        self.logs.last().map_or(0, |l| l.epoch)
    }
}

#[derive(Debug, Clone)]
pub struct Fitted<T: Scalar> {
    pub model: SignModel<T>,
    pub report: FitReport,
}

/// Builds a model from `cfg.seed` and trains it with the same generator.
pub fn fit<T: Scalar>(
    model_cfg: &ModelConfig,
    train: &[TrainSample<T>],
    valid: Option<&[TrainSample<T>]>,
    cfg: &TrainConfig,
) -> Result<Fitted<T>> {
    fit_with(model_cfg, train, valid, cfg, |_, _| {})
}

pub fn fit_with<T: Scalar>(
    model_cfg: &ModelConfig,
    train: &[TrainSample<T>],
    valid: Option<&[TrainSample<T>]>,
    cfg: &TrainConfig,
    observer: impl FnMut(&EpochLog, &SignModel<T>),
) -> Result<Fitted<T>> {
    let mut rng = seeded_rng(cfg.seed);
    let mut model = SignModel::new(model_cfg.clone(), &mut rng)?;
    let report = train_model(&mut model, &mut rng, train, valid, cfg, observer)?;
    Ok(Fitted { model, report })
}

fn grad_norm<T: Scalar>(params: &[Tensor<T>]) -> f64 {
    params
        .iter()
        .filter_map(|p| p.grad())
        .flatten()
        .map(|g| g.to_f64_lossy().powi(2))
        .sum::<f64>()
        .sqrt()
}

fn with_context(e: Error, ctx: &str) -> Error {
    match e {
        Error::NonFinite { context } => Error::NonFinite {
            context: format!("{ctx}, {context}"),
        },
        other => other,
    }
}

/// Trains an existing model in place. Mini-batches come from shuffling
/// with `rng`; each sample's loss is backpropagated with weight `1/B` and
/// one Adam step is taken per batch.
pub fn train_model<T: Scalar>(
    model: &mut SignModel<T>,
    rng: &mut Rng64,
    train: &[TrainSample<T>],
    valid: Option<&[TrainSample<T>]>,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochLog, &SignModel<T>),
) -> Result<FitReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let params = model.params();
    let coarse_params = model.coarse_head_params();
    let mut adam = AdamState::new(
        &params,
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
    )?;
    let valid_items = valid.filter(|v| !v.is_empty()).map(reconstruction_items);
    let mut best: Option<(usize, f64, Vec<Vec<T>>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(rng);
        let mut sums = [0.0f64; 4];
        let mut max_coarse = 0.0f64;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let ctx = format!("epoch {epoch} batch {b}");
            params.iter().for_each(Tensor::zero_grad);
            let weight = T::one() / T::from_usize_lossy(batch.len());
            for &i in batch {
                let sample = &train[i];
                let sample_ctx = format!("{ctx} sample {}", sample.id);
                let parts = forward_loss(model, sample, cfg, Some(rng)).map_err(|e| with_context(e, &sample_ctx))?;
                let total = total_loss(&parts)?;
                let value = total.item().to_f64_lossy();
                if !value.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("{sample_ctx}: loss is {value}"),
                    });
                }
                sums[0] += value;
                sums[1] += parts.refinement.item().to_f64_lossy();
                sums[2] += parts.coarse.as_ref().map_or(0.0, |c| c.item().to_f64_lossy());
                sums[3] += parts.length.item().to_f64_lossy();
                total.scale(weight).backward()?;
            }
            let norm = grad_norm(&params);
            if !norm.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("{ctx}: gradient norm is {norm}"),
                });
            }
            max_coarse = max_coarse.max(grad_norm(&coarse_params));
            adam_step(&params, &mut adam)?;
        }

        let n = train.len() as f64;
        let valid_dtw = match &valid_items {
            Some(items) => Some(reconstruction_ndtw(model, items).map_err(|e| with_context(e, &format!("epoch {epoch} validation")))?),
            None => None,
        };
        if let Some(metric) = valid_dtw {
            if best.as_ref().is_none_or(|(_, m, _)| metric < *m) {
                best = Some((epoch, metric, params.iter().map(Tensor::to_vec).collect()));
            }
        }
        let log = EpochLog {
            epoch,
            loss_total: sums[0] / n,
            loss_refine: sums[1] / n,
            loss_coarse: sums[2] / n,
            loss_len: sums[3] / n,
            seconds: if cfg.record_wall_clock {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
            coarse_grad_norm: max_coarse,
            valid_dtw,
        };
        observer(&log, model);
        logs.push(log);
    }
    params.iter().for_each(Tensor::clear_grad);

    let (best_epoch, best_metric) = match best {
        Some((epoch, metric, snapshot)) => {
            for (p, data) in params.iter().zip(snapshot) {
                p.set_data(data)?;
            }
            (Some(epoch), Some(metric))
        }
        None => (None, None),
    };
    Ok(FitReport {
        logs,
        best_epoch,
        best_metric,
    })
}

pub const LOG_COLUMNS: [&str; 6] = ["epoch", "loss_total", "loss_refine", "loss_coarse", "loss_len", "seconds"];

pub fn write_log_csv<W: Write>(out: W, logs: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(LOG_COLUMNS).map_err(csv_err)?;
    for l in logs {
        w.write_record([
            l.epoch.to_string(),
            l.loss_total.to_string(),
            l.loss_refine.to_string(),
            l.loss_coarse.to_string(),
            l.loss_len.to_string(),
            l.seconds.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_log_csv(path: &Path, logs: &[EpochLog]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_log_csv(std::io::BufWriter::new(file), logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{synthetic_corpus, SyntheticConfig};
    use crate::encoder::{EncoderConfig, FfnKind, LengthBounds};

    pub(crate) fn tiny_model(multiscale: bool) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                d_model: 8,
                n_heads: 2,
                n_layers_text: 1,
                n_layers_text_pose: 1,
                mlp_hidden: 8,
                kan_hidden: 4,
                ffn_kind: FfnKind::Kan,
                dropout: 0.0,
                ..EncoderConfig::default()
            },
            length_bounds: LengthBounds { l_min: 2, l_max: 40 },
            refinement_steps: 3,
            multiscale,
            ..ModelConfig::default()
        }
    }

    pub(crate) fn tiny_data(n: usize) -> Vec<TrainSample<f64>> {
        let vocab = Vocabulary::default_hamnosys();
        let cfg = SyntheticConfig {
            min_frames: 4,
            max_frames: 6,
            ..SyntheticConfig::default()
        };
        synthetic_corpus(n, 7, &vocab, &cfg)
            .iter()
            .map(|s| TrainSample::prepare(s, &vocab, &PartGrouping::default(), 64).unwrap())
            .collect()
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 2,
            record_wall_clock: false,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn targets_are_ground_truth_at_last_step() {
        let data = tiny_data(1);
        let s = &data[0];
        for anchor in [TargetAnchor::GroundTruth, TargetAnchor::Initial] {
            let t = step_targets(s, 4, anchor).unwrap();
            assert_eq!(t[0].to_vec(), s.pose.coords);
        }
        let ramp = step_targets(s, 4, TargetAnchor::Initial).unwrap();
        assert_ne!(ramp[3].to_vec(), s.pose.coords);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = tiny_data(3);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..quick(2)
        };
        let mc = tiny_model(true);
        let init = SignModel::<f64>::new(mc.clone(), &mut seeded_rng(cfg.seed)).unwrap();
        let fitted = fit(&mc, &data, None, &cfg).unwrap();
        for (a, b) in init.params().iter().zip(fitted.model.params()) {
            assert_eq!(a.to_vec(), b.to_vec());
        }
    }

    #[test]
    fn same_seed_same_logs() {
        let data = tiny_data(3);
        let mc = tiny_model(true);
        let a = fit(&mc, &data, None, &quick(2)).unwrap();
        let b = fit(&mc, &data, None, &quick(2)).unwrap();
        assert_eq!(a.report.logs, b.report.logs);
        let mut la = Vec::new();
        let mut lb = Vec::new();
        write_log_csv(&mut la, &a.report.logs).unwrap();
        write_log_csv(&mut lb, &b.report.logs).unwrap();
        assert_eq!(la, lb);
        assert!(String::from_utf8(la).unwrap().starts_with("epoch,loss_total,loss_refine,loss_coarse,loss_len,seconds\n"));
    }

    #[test]
    fn single_scale_leaves_coarse_head_untouched() {
        let data = tiny_data(3);
        let mc = tiny_model(false);
        let fitted = fit(&mc, &data, None, &quick(2)).unwrap();
        assert!(fitted.report.logs.iter().all(|l| l.coarse_grad_norm == 0.0 && l.loss_coarse == 0.0));
        let multi = fit(&tiny_model(true), &data, None, &quick(1)).unwrap();
        assert!(multi.report.logs[0].coarse_grad_norm > 0.0);
    }

    #[test]
    fn validation_keeps_best_epoch() {
        let data = tiny_data(4);
        let mc = tiny_model(true);
        let mut seen = Vec::new();
        let fitted = fit_with(&mc, &data[..3], Some(&data[3..]), &quick(3), |log, _| seen.push(log.valid_dtw.unwrap())).unwrap();
        let best = seen.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(fitted.report.best_metric, Some(best));
        let again = reconstruction_ndtw(&fitted.model, &reconstruction_items(&data[3..])).unwrap();
        assert!((again - best).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_is_sum_of_parts() {
        let data = tiny_data(1);
        let model = SignModel::<f64>::new(tiny_model(true), &mut seeded_rng(3)).unwrap();
        let cfg = TrainConfig::default();
        let params = model.params();
        let grads = |pick: &dyn Fn(&LossParts<f64>) -> Tensor<f64>| {
            params.iter().for_each(Tensor::zero_grad);
            let parts = forward_loss(&model, &data[0], &cfg, None).unwrap();
            pick(&parts).backward().unwrap();
            params.iter().flat_map(|p| p.grad().unwrap()).collect::<Vec<f64>>()
        };
        let total = grads(&|p| total_loss(p).unwrap());
        let r = grads(&|p| p.refinement.clone());
        let l = grads(&|p| p.length.clone());
        let c = grads(&|p| p.coarse.clone().unwrap());
        for i in 0..total.len() {
            let sum = r[i] + l[i] + c[i];
            assert!((total[i] - sum).abs() <= 1e-10 * (1.0 + sum.abs()));
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { epochs: 2001, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { teacher_forcing: 1.5, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
        let data = tiny_data(1);
        assert!(fit::<f64>(&tiny_model(true), &data[..0], None, &quick(1)).is_err());
    }
}
