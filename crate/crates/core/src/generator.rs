//! Pose-side pipeline: pose and step embeddings, text-pose fusion, coarse and
//! fine heads, and the iterative refinement loop.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::encoder::{EncoderConfig, EncoderStack};
use crate::error::{Error, Result};
use crate::kan::KanBasisConfig;
use crate::nn::{ensure_finite, join, Embedding, Linear, Parameterized};
use crate::numerics::{Rng64, Tensor};
use crate::pose::{init_pose_sequence, COARSE_DIM, POSE_DIM};
use crate::scalar::Scalar;

/// `γ_t = log_T(T − t + 1)` for `t = 0..=T` and `α_t = γ_t − γ_{t+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementSchedule {
    pub steps: usize,
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
}

pub fn build_schedule(steps: usize) -> Result<RefinementSchedule> {
    if steps < 2 {
        return Err(Error::InvalidArgument(format!(
            "refinement needs at least 2 steps, got {steps}"
        )));
    }
    let ln_t = (steps as f64).ln();
    let gamma: Vec<f64> = (0..=steps)
        .map(|t| ((steps - t + 1) as f64).ln() / ln_t)
        .collect();
    let alpha = gamma.windows(2).map(|w| w[0] - w[1]).collect();
    Ok(RefinementSchedule {
        steps,
        gamma,
        alpha,
    })
}

/// One pass of the refinement loop, recorded for the losses.
#[derive(Debug, Clone)]
pub struct StepRecord<T: Scalar> {
    pub step: usize,
    /// `ŝ_{t+1}` as fed into this step.
    pub input: Tensor<T>,
    /// `None` when the coarse pathway is disabled.
    pub coarse: Option<Tensor<T>>,
    /// `q_t`
    pub fine: Tensor<T>,
    /// `ŝ_t = α_t·q_t + (1 − α_t)·ŝ_{t+1}`, before any teacher forcing.
    pub estimate: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Refinement<T: Scalar> {
    /// `ŝ_0`, `[frames, 274]`.
    pub output: Tensor<T>,
    /// In generation order, `t = T−1` first.
    pub steps: Vec<StepRecord<T>>,
}

/// Training-mode controls for [`PoseGenerator::refine`].
pub struct TrainRefine<'a, T: Scalar> {
    pub teacher_forcing: f64,
    pub noise: f64,
    /// Target for `ŝ_t`, indexed by step `t`.
    pub targets: &'a [Tensor<T>],
    pub rng: &'a mut Rng64,
}

#[derive(Debug, Clone)]
pub struct PoseGenerator<T: Scalar> {
    pub pose_projection: Linear<T>,
    pub pose_positions: Embedding<T>,
    pub step_table: Embedding<T>,
    pub step_f1: Linear<T>,
    pub step_f2: Linear<T>,
    pub encoder: EncoderStack<T>,
    pub coarse_f1: Linear<T>,
    pub coarse_f2: Linear<T>,
    pub fine_g1: Linear<T>,
    pub fine_g2: Linear<T>,
    pub schedule: RefinementSchedule,
    pub multiscale: bool,
}

impl<T: Scalar> PoseGenerator<T> {
    pub fn new(
        rng: &mut Rng64,
        cfg: &EncoderConfig,
        kan: &KanBasisConfig,
        max_frames: usize,
        steps: usize,
        multiscale: bool,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let schedule = build_schedule(steps)?;
        Ok(Self {
            pose_projection: Linear::new(rng, POSE_DIM, d),
            pose_positions: Embedding::new(rng, max_frames, d),
            step_table: Embedding::new(rng, steps, d),
            step_f1: Linear::new(rng, d, d),
            step_f2: Linear::new(rng, d, d),
            encoder: EncoderStack::new(
                rng,
                "text-pose encoder",
                cfg.n_layers_text_pose,
                cfg.ffn_kind,
                cfg,
                kan,
            )?,
            coarse_f1: Linear::new(rng, d, d),
            coarse_f2: Linear::new(rng, d, COARSE_DIM),
            fine_g1: Linear::new(rng, d + COARSE_DIM, d),
            fine_g2: Linear::new(rng, d, POSE_DIM),
            schedule,
            multiscale,
        })
    }

    pub fn d_model(&self) -> usize {
        self.pose_projection.n_out()
    }

    pub fn max_frames(&self) -> usize {
        self.pose_positions.rows()
    }

    /// `f_p(X) + E_pos(t)` for `X: [frames, 274]`.
    pub fn embed_pose(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [frames, dim] = *x.shape() else {
            return Err(Error::shape("embed_pose", x.shape(), &[0, POSE_DIM]));
        };
        if dim != POSE_DIM {
            return Err(Error::shape("embed_pose", x.shape(), &[frames, POSE_DIM]));
        }
        if frames > self.max_frames() {
            return Err(Error::InvalidArgument(format!(
                "{frames} frames exceed the {} pose positions",
                self.max_frames()
            )));
        }
        let positions: Vec<usize> = (0..frames).collect();
        self.pose_projection
            .forward(x)?
            .add(&self.pose_positions.lookup(&positions)?)
    }

    /// `f₂(SiLU(f₁(e(t))))`, shape `[1, d]`.
    pub fn encode_step(&self, t: usize) -> Result<Tensor<T>> {
        if t >= self.schedule.steps {
            return Err(Error::InvalidArgument(format!(
                "step {t} out of range for {} steps",
                self.schedule.steps
            )));
        }
        let e = self.step_table.lookup(&[t])?;
        self.step_f2.forward(&self.step_f1.forward(&e)?.silu())
    }

    /// Runs the text-pose stack over `[pose | text | step]` and returns the
    /// pose positions only.
    pub fn fuse_and_encode(
        &self,
        pose: &Tensor<T>,
        text: &Tensor<T>,
        text_mask: &[bool],
        step: &Tensor<T>,
        rng: Option<&mut Rng64>,
    ) -> Result<Tensor<T>> {
        let d = self.d_model();
        for (name, t) in [("pose", pose), ("text", text), ("step", step)] {
            if t.shape().len() != 2 || t.shape()[1] != d {
                return Err(Error::InvalidArgument(format!(
                    "{name} embedding has shape {:?}, expected width {d}",
                    t.shape()
                )));
            }
        }
        if text_mask.len() != text.shape()[0] {
            return Err(Error::shape("fuse_and_encode", text.shape(), &[text_mask.len()]));
        }
        let frames = pose.shape()[0];
        let mut mask = vec![false; frames];
        mask.extend_from_slice(text_mask);
        mask.push(false);
        let seq = Tensor::concat_rows(&[pose.clone(), text.clone(), step.clone()])?;
        self.encoder.forward(&seq, Some(&mask), rng)?.slice_rows(0, frames)
    }

    /// `[frames, 50]`
    pub fn predict_coarse(&self, etp: &Tensor<T>) -> Result<Tensor<T>> {
        self.coarse_f2.forward(&self.coarse_f1.forward(etp)?.silu())
    }

    /// `g₂(SiLU(g₁([E_tp | coarse])))`, shape `[frames, 274]`.
    pub fn predict_fine(&self, etp: &Tensor<T>, coarse: &Tensor<T>) -> Result<Tensor<T>> {
        if coarse.shape() != [etp.shape()[0], COARSE_DIM] {
            return Err(Error::shape("predict_fine", coarse.shape(), &[etp.shape()[0], COARSE_DIM]));
        }
        let fused = Tensor::concat_cols(&[etp.clone(), coarse.clone()])?;
        self.fine_g2.forward(&self.fine_g1.forward(&fused)?.silu())
    }

    /// One step: embeds `current`, fuses, and returns `(coarse, q_t)`.
    pub fn step(
        &self,
        t: usize,
        current: &Tensor<T>,
        text: &Tensor<T>,
        text_mask: &[bool],
        rng: Option<&mut Rng64>,
    ) -> Result<(Option<Tensor<T>>, Tensor<T>)> {
        let ep = self.embed_pose(current)?;
        let es = self.encode_step(t)?;
        let etp = self.fuse_and_encode(&ep, text, text_mask, &es, rng)?;
        if self.multiscale {
            let coarse = self.predict_coarse(&etp)?;
            let fine = self.predict_fine(&etp, &coarse)?;
            Ok((Some(coarse), fine))
        } else {
            let zeros = Tensor::zeros(&[current.shape()[0], COARSE_DIM]);
            Ok((None, self.predict_fine(&etp, &zeros)?))
        }
    }

    /// Generates `frames` frames starting from `first_frame` replicated,
    /// running `t = T−1 … 0`. Inference when `train` is `None`.
    pub fn refine(
        &self,
        first_frame: &[T],
        frames: usize,
        text: &Tensor<T>,
        text_mask: &[bool],
        mut train: Option<TrainRefine<'_, T>>,
    ) -> Result<Refinement<T>> {
        let steps = self.schedule.steps;
        if let Some(tr) = &train {
            if tr.targets.len() != steps {
                return Err(Error::InvalidArgument(format!(
                    "{} refinement targets for {steps} steps",
                    tr.targets.len()
                )));
            }
            if let Some(bad) = tr.targets.iter().find(|s| s.shape() != [frames, POSE_DIM]) {
                return Err(Error::shape("refine targets", bad.shape(), &[frames, POSE_DIM]));
            }
            if !(0.0..=1.0).contains(&tr.teacher_forcing) {
                return Err(Error::InvalidArgument(format!(
                    "teacher forcing probability {} not in [0, 1]",
                    tr.teacher_forcing
                )));
            }
        }
        let mut current = Tensor::new(init_pose_sequence(first_frame, frames)?, &[frames, POSE_DIM])?;
        let mut records = Vec::with_capacity(steps);
        for t in (0..steps).rev() {
            let alpha = T::lit(self.schedule.alpha[t]);
            let rng = train.as_mut().map(|tr| &mut *tr.rng);
            let (coarse, fine) = self
                .step(t, &current, text, text_mask, rng)
                .map_err(|e| at_step(e, t))?;
            let estimate = fine.scale(alpha).add(&current.scale(T::one() - alpha))?;
            ensure_finite(&estimate, || format!("refinement step {t}"))?;
            let mut next = estimate.clone();
            if let Some(tr) = train.as_mut() {
                if tr.rng.random::<f64>() < tr.teacher_forcing {
                    next = tr.targets[t].clone();
                }
                if tr.noise > 0.0 {
                    let eps = tr.noise;
                    let z: Vec<T> = (0..frames * POSE_DIM)
                        .map(|_| T::lit(eps * tr.rng.sample::<f64, _>(StandardNormal)))
                        .collect();
                    next = next.add(&Tensor::new(z, &[frames, POSE_DIM])?)?;
                }
            }
            records.push(StepRecord {
                step: t,
                input: current,
                coarse,
                fine,
                estimate,
            });
            current = next;
        }
        let output = records.last().expect("at least two steps").estimate.clone();
        Ok(Refinement {
            output,
            steps: records,
        })
    }

    pub fn count(cfg: &EncoderConfig, kan: &KanBasisConfig, max_frames: usize, steps: usize) -> usize {
        let d = cfg.d_model;
        Linear::<T>::count(POSE_DIM, d)
            + max_frames * d
            + steps * d
            + 2 * Linear::<T>::count(d, d)
            + cfg.n_layers_text_pose * crate::encoder::EncoderBlock::<T>::count(cfg.ffn_kind, cfg, kan)
            + Linear::<T>::count(d, d)
            + Linear::<T>::count(d, COARSE_DIM)
            + Linear::<T>::count(d + COARSE_DIM, d)
            + Linear::<T>::count(d, POSE_DIM)
    }

    /// Parameters of the coarse head only.
    pub fn coarse_head_params(&self) -> Vec<Tensor<T>> {
        let mut out = Vec::new();
        self.coarse_f1.collect_params("", &mut out);
        self.coarse_f2.collect_params("", &mut out);
        out.into_iter().map(|(_, t)| t).collect()
    }
}

fn at_step(e: Error, t: usize) -> Error {
    match e {
        Error::NonFinite { context } => Error::NonFinite {
            context: format!("refinement step {t}: {context}"),
        },
        other => other,
    }
}

impl<T: Scalar> Parameterized<T> for PoseGenerator<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.pose_projection.collect_params(&join(prefix, "pose_projection"), out);
        self.pose_positions.collect_params(&join(prefix, "pose_positions"), out);
        self.step_table.collect_params(&join(prefix, "step_table"), out);
        self.step_f1.collect_params(&join(prefix, "step_f1"), out);
        self.step_f2.collect_params(&join(prefix, "step_f2"), out);
        self.encoder.collect_params(&join(prefix, "encoder"), out);
        self.coarse_f1.collect_params(&join(prefix, "coarse_f1"), out);
        self.coarse_f2.collect_params(&join(prefix, "coarse_f2"), out);
        self.fine_g1.collect_params(&join(prefix, "fine_g1"), out);
        self.fine_g2.collect_params(&join(prefix, "fine_g2"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::FfnKind;
    use crate::numerics::rng::normal_vec;
    use crate::numerics::seeded_rng;

    fn toy(multiscale: bool) -> (PoseGenerator<f64>, Rng64) {
        let mut rng = seeded_rng(3);
        let cfg = EncoderConfig {
            d_model: 8,
            n_heads: 2,
            n_layers_text: 1,
            n_layers_text_pose: 1,
            ffn_kind: FfnKind::Kan,
            text_ffn_kind: FfnKind::Mlp,
            mlp_hidden: 8,
            kan_hidden: 4,
            max_positions: 8,
            dropout: 0.0,
        };
        let g = PoseGenerator::new(&mut rng, &cfg, &KanBasisConfig::default(), 6, 3, multiscale).unwrap();
        (g, rng)
    }

    fn zero_linear(l: &Linear<f64>) {
        l.weight.update_data(|d| d.fill(0.0));
        if let Some(b) = &l.bias {
            b.update_data(|d| d.fill(0.0));
        }
    }

    #[test]
    fn schedule_examples() {
        let s = build_schedule(10).unwrap();
        assert_eq!(s.gamma[10], 0.0);
        assert!((s.alpha[9] - 2f64.log10()).abs() < 1e-12);
        let total: f64 = s.alpha.iter().sum();
        assert!((total - 11f64.log10()).abs() < 1e-12);
        assert!(s.alpha.windows(2).all(|w| w[0] < w[1]));
        assert!(build_schedule(1).is_err());
    }

    #[test]
    fn embed_pose_adds_positions() {
        let (g, _) = toy(true);
        zero_linear(&g.pose_projection);
        let x = Tensor::zeros(&[3, POSE_DIM]);
        let e = g.embed_pose(&x).unwrap().to_vec();
        assert_eq!(e, g.pose_positions.table.to_vec()[..3 * 8].to_vec());
        assert!(g.embed_pose(&Tensor::zeros(&[7, POSE_DIM])).is_err());
        assert!(g.embed_pose(&Tensor::zeros(&[2, 10])).is_err());
    }

    #[test]
    fn step_encodings() {
        let (g, _) = toy(true);
        let a = g.encode_step(0).unwrap();
        assert_eq!(a.shape(), &[1, 8]);
        assert_ne!(a.to_vec(), g.encode_step(1).unwrap().to_vec());
        assert!(g.encode_step(3).is_err());
        zero_linear(&g.step_f2);
        assert!(g.encode_step(2).unwrap().to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fused_output_tracks_pose_length_and_ignores_pad() {
        let (g, mut rng) = toy(true);
        let pose = Tensor::new(normal_vec(&mut rng, 4 * 8, 1.0), &[4, 8]).unwrap();
        let step = g.encode_step(1).unwrap();
        let text = Tensor::new(normal_vec(&mut rng, 3 * 8, 1.0), &[3, 8]).unwrap();
        let out = g.fuse_and_encode(&pose, &text, &[false; 3], &step, None).unwrap();
        assert_eq!(out.shape(), &[4, 8]);

        let mut padded = text.to_vec();
        padded.extend(normal_vec::<f64>(&mut rng, 2 * 8, 5.0));
        let padded = Tensor::new(padded, &[5, 8]).unwrap();
        let mask = [false, false, false, true, true];
        let out2 = g.fuse_and_encode(&pose, &padded, &mask, &step, None).unwrap();
        for (a, b) in out.to_vec().iter().zip(out2.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
        let narrow = Tensor::zeros(&[3, 4]);
        assert!(g.fuse_and_encode(&pose, &narrow, &[false; 3], &step, None).is_err());
    }

    #[test]
    fn heads_shapes_and_zero_weights() {
        let (g, mut rng) = toy(true);
        let etp = Tensor::new(normal_vec(&mut rng, 2 * 8, 1.0), &[2, 8]).unwrap();
        let coarse = g.predict_coarse(&etp).unwrap();
        assert_eq!(coarse.shape(), &[2, COARSE_DIM]);
        let fine = g.predict_fine(&etp, &coarse).unwrap();
        assert_eq!(fine.shape(), &[2, POSE_DIM]);

        let bumped = coarse.add_scalar(0.5);
        let fine2 = g.predict_fine(&etp, &bumped).unwrap();
        assert_ne!(fine.to_vec(), fine2.to_vec());

        zero_linear(&g.coarse_f2);
        zero_linear(&g.fine_g2);
        assert!(g.predict_coarse(&etp).unwrap().to_vec().iter().all(|&v| v == 0.0));
        assert!(g.predict_fine(&etp, &coarse).unwrap().to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn coarse_loss_reaches_encoder() {
        let (g, mut rng) = toy(true);
        let pose = Tensor::new(normal_vec(&mut rng, 2 * 8, 1.0), &[2, 8]).unwrap();
        let text = Tensor::new(normal_vec(&mut rng, 2 * 8, 1.0), &[2, 8]).unwrap();
        let etp = g
            .fuse_and_encode(&pose, &text, &[false; 2], &g.encode_step(0).unwrap(), None)
            .unwrap();
        let loss = g.predict_coarse(&etp).unwrap().square().mean().unwrap();
        let params = g.encoder.params();
        for p in &params {
            p.zero_grad();
        }
        loss.backward().unwrap();
        let norm: f64 = params.iter().flat_map(|p| p.grad().unwrap()).map(|v| v * v).sum();
        assert!(norm > 0.0);
    }

    #[test]
    fn identity_prediction_is_a_fixed_point() {
        // q_t = ŝ_{t+1} when the fine head outputs its input; emulate with
        // a blend check on one step.
        let (g, mut rng) = toy(true);
        let p0: Vec<f64> = normal_vec(&mut rng, POSE_DIM, 1.0);
        zero_linear(&g.fine_g2);
        let bias: Vec<f64> = p0.clone();
        g.fine_g2.bias.as_ref().unwrap().set_data(bias).unwrap();
        let text = Tensor::new(normal_vec(&mut rng, 2 * 8, 1.0), &[2, 8]).unwrap();
        let r = g.refine(&p0, 3, &text, &[false; 2], None).unwrap();
        let expected = init_pose_sequence(&p0, 3).unwrap();
        for (a, b) in r.output.to_vec().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_step_blend() {
        let (g, mut rng) = toy(true);
        let p0: Vec<f64> = normal_vec(&mut rng, POSE_DIM, 1.0);
        let text = Tensor::new(normal_vec(&mut rng, 2 * 8, 1.0), &[2, 8]).unwrap();
        let r = g.refine(&p0, 2, &text, &[false; 2], None).unwrap();
        let first = &r.steps[0];
        assert_eq!(first.step, 2);
        let a = g.schedule.alpha[2];
        let (q, s_in, s) = (first.fine.to_vec(), first.input.to_vec(), first.estimate.to_vec());
        for i in 0..q.len() {
            assert!((s[i] - (a * q[i] + (1.0 - a) * s_in[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn full_teacher_forcing_feeds_targets() {
        let (g, mut rng) = toy(true);
        let p0: Vec<f64> = normal_vec(&mut rng, POSE_DIM, 1.0);
        let text = Tensor::new(normal_vec(&mut rng, 2 * 8, 1.0), &[2, 8]).unwrap();
        let targets: Vec<Tensor<f64>> = (0..3)
            .map(|_| Tensor::new(normal_vec(&mut rng, 2 * POSE_DIM, 1.0), &[2, POSE_DIM]).unwrap())
            .collect();
        let mut train_rng = seeded_rng(10);
        let r = g
            .refine(
                &p0,
                2,
                &text,
                &[false; 2],
                Some(TrainRefine {
                    teacher_forcing: 1.0,
                    noise: 0.0,
                    targets: &targets,
                    rng: &mut train_rng,
                }),
            )
            .unwrap();
        for rec in &r.steps {
            if rec.step + 1 < 3 {
                assert_eq!(rec.input.to_vec(), targets[rec.step + 1].to_vec());
            }
        }
    }

    #[test]
    fn inference_is_deterministic_and_multiscale_off_skips_coarse() {
        for multiscale in [true, false] {
            let (g, mut rng) = toy(multiscale);
            let p0: Vec<f64> = normal_vec(&mut rng, POSE_DIM, 1.0);
            let text = Tensor::new(normal_vec(&mut rng, 2 * 8, 1.0), &[2, 8]).unwrap();
            let a = g.refine(&p0, 4, &text, &[false; 2], None).unwrap();
            let b = g.refine(&p0, 4, &text, &[false; 2], None).unwrap();
            assert_eq!(a.output.to_vec(), b.output.to_vec());
            assert_eq!(a.output.shape(), &[4, POSE_DIM]);
            assert_eq!(a.steps.iter().all(|s| s.coarse.is_some()), multiscale);
        }
    }

    #[test]
    fn non_finite_step_is_reported() {
        let (g, mut rng) = toy(true);
        g.fine_g2.bias.as_ref().unwrap().update_data(|d| d[0] = f64::NAN);
        let text = Tensor::new(normal_vec(&mut rng, 2 * 8, 1.0), &[2, 8]).unwrap();
        let err = g.refine(&vec![0.0; POSE_DIM], 2, &text, &[false; 2], None).unwrap_err();
        assert!(err.to_string().contains("refinement step 2"), "{err}");
    }

    #[test]
    fn count_matches_enumeration() {
        let (g, _) = toy(true);
        let cfg = EncoderConfig {
            d_model: 8,
            n_heads: 2,
            n_layers_text: 1,
            n_layers_text_pose: 1,
            ffn_kind: FfnKind::Kan,
            text_ffn_kind: FfnKind::Mlp,
            mlp_hidden: 8,
            kan_hidden: 4,
            max_positions: 8,
            dropout: 0.0,
        };
        assert_eq!(g.param_count(), PoseGenerator::<f64>::count(&cfg, &KanBasisConfig::default(), 6, 3));
    }
}
