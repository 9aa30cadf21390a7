//! The full notation-to-pose model: text encoder, length head and generator.

use serde::{Deserialize, Serialize};

use crate::encoder::{
    finalize_length, EncoderBlock, EncoderConfig, FfnKind, LengthBounds, TextEncoder,
};
use crate::error::{Error, Result};
use crate::generator::{PoseGenerator, Refinement};
use crate::kan::KanBasisConfig;
use crate::nn::{join, Linear, Parameterized};
use crate::numerics::{Rng64, Tensor};
use crate::pose::POSE_DIM;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub kan: KanBasisConfig,
    /// Token-embedding rows, PAD and BOS included.
    pub vocab_size: usize,
    /// Bounds for predicted lengths; `l_max` also sizes the pose positions.
    pub length_bounds: LengthBounds,
    pub refinement_steps: usize,
    /// Coarse pose pathway and its supervision.
    pub multiscale: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            kan: KanBasisConfig::default(),
            vocab_size: 212,
            length_bounds: LengthBounds::default(),
            refinement_steps: 10,
            multiscale: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.kan.validate()?;
        let b = self.length_bounds;
        if b.l_min == 0 || b.l_min > b.l_max {
            return Err(Error::InvalidArgument(format!(
                "length bounds [{}, {}] are invalid",
                b.l_min, b.l_max
            )));
        }
        if self.vocab_size < 2 {
            return Err(Error::InvalidArgument("vocabulary needs PAD and BOS rows".into()));
        }
        Ok(())
    }

    /// Closed-form parameter counts per top-level module.
    pub fn param_breakdown(&self) -> Vec<(String, usize)> {
        let e = &self.encoder;
        let d = e.d_model;
        let text_block = EncoderBlock::<f64>::count(e.text_ffn_kind, e, &self.kan);
        let pose_block = EncoderBlock::<f64>::count(e.ffn_kind, e, &self.kan);
        let steps = self.refinement_steps;
        vec![
            ("text.token_embedding".into(), self.vocab_size * d),
            ("text.positions".into(), e.max_positions * d),
            ("text.encoder".into(), e.n_layers_text * text_block),
            ("text.length_head".into(), Linear::<f64>::count(d, 1)),
            ("generator.pose_projection".into(), Linear::<f64>::count(POSE_DIM, d)),
            ("generator.pose_positions".into(), self.length_bounds.l_max * d),
            ("generator.step".into(), steps * d + 2 * Linear::<f64>::count(d, d)),
            ("generator.encoder".into(), e.n_layers_text_pose * pose_block),
            (
                "generator.coarse_head".into(),
                Linear::<f64>::count(d, d) + Linear::<f64>::count(d, crate::pose::COARSE_DIM),
            ),
            (
                "generator.fine_head".into(),
                Linear::<f64>::count(d + crate::pose::COARSE_DIM, d) + Linear::<f64>::count(d, POSE_DIM),
            ),
        ]
    }

    pub fn param_total(&self) -> usize {
        self.param_breakdown().iter().map(|(_, n)| n).sum()
    }

    /// Same architecture with the text-pose feed-forward layers set to `kind`.
    pub fn with_ffn(mut self, kind: FfnKind) -> Self {
        self.encoder.ffn_kind = kind;
        self
    }
}

/// Output of [`SignModel::generate`].
#[derive(Debug, Clone)]
pub struct Generated<T: Scalar> {
    pub length_raw: f64,
    pub frames: usize,
    /// `frames × 274`, normalized coordinates.
    pub coords: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct SignModel<T: Scalar> {
    pub config: ModelConfig,
    pub text: TextEncoder<T>,
    pub generator: PoseGenerator<T>,
}

impl<T: Scalar> SignModel<T> {
    pub fn new(config: ModelConfig, rng: &mut Rng64) -> Result<Self> {
        config.validate()?;
        let text = TextEncoder::new(rng, config.vocab_size, &config.encoder, &config.kan)?;
        let generator = PoseGenerator::new(
            rng,
            &config.encoder,
            &config.kan,
            config.length_bounds.l_max,
            config.refinement_steps,
            config.multiscale,
        )?;
        Ok(Self {
            config,
            text,
            generator,
        })
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::UnknownToken(bad));
        }
        Ok(())
    }

    /// Encodes one unpadded token list; returns states and the all-false mask.
    pub fn encode_text(&self, ids: &[usize], rng: Option<&mut Rng64>) -> Result<(Tensor<T>, Vec<bool>)> {
        self.check_ids(ids)?;
        let mask = vec![false; ids.len()];
        let h = self.text.encode(ids, &mask, rng)?;
        Ok((h, mask))
    }

    /// Refinement with the ground-truth length and first frame, as used for
    /// validation and reconstruction metrics.
    pub fn reconstruct(&self, ids: &[usize], first_frame: &[T], frames: usize) -> Result<Refinement<T>> {
        let (h, mask) = self.encode_text(ids, None)?;
        self.generator.refine(first_frame, frames, &h, &mask, None)
    }

    /// Predicts the length (unless `frames` is given) and refines from
    /// `first_frame` in inference mode.
    pub fn generate(&self, ids: &[usize], first_frame: &[T], frames: Option<usize>) -> Result<Generated<T>> {
        let (h, mask) = self.encode_text(ids, None)?;
        let length_raw = self.text.predict_length(&h, &mask)?.item().to_f64_lossy();
        let frames = frames.unwrap_or_else(|| finalize_length(length_raw, self.config.length_bounds));
        let r = self.generator.refine(first_frame, frames, &h, &mask, None)?;
        Ok(Generated {
            length_raw,
            frames,
            coords: r.output.to_vec(),
        })
    }

    pub fn coarse_head_params(&self) -> Vec<Tensor<T>> {
        self.generator.coarse_head_params()
    }
}

impl<T: Scalar> Parameterized<T> for SignModel<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.text.collect_params(&join(prefix, "text"), out);
        self.generator.collect_params(&join(prefix, "generator"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;

    #[test]
    fn default_sized_counts() {
        let mlp = ModelConfig::default().with_ffn(FfnKind::Mlp);
        let kan = ModelConfig::default().with_ffn(FfnKind::Kan);
        let (m, k) = (mlp.param_total(), kan.param_total());
        assert!(k < m);
        let ratio = m as f64 / k as f64;
        let reference = 3.8 / 2.2;
        assert!((ratio / reference - 1.0).abs() < 0.2, "ratio {ratio}");
        // One MLP block: attention 66,048 + norms 512 + FFN 526,464.
        let e = &mlp.encoder;
        assert_eq!(EncoderBlock::<f64>::count(FfnKind::Mlp, e, &mlp.kan), 593_024);
    }

    #[test]
    fn breakdown_matches_enumeration() {
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                d_model: 16,
                n_heads: 2,
                n_layers_text: 1,
                n_layers_text_pose: 2,
                mlp_hidden: 32,
                kan_hidden: 8,
                max_positions: 20,
                ..EncoderConfig::default()
            },
            vocab_size: 30,
            length_bounds: LengthBounds { l_min: 2, l_max: 12 },
            refinement_steps: 3,
            ..ModelConfig::default()
        };
        let model = SignModel::<f64>::new(cfg.clone(), &mut seeded_rng(0)).unwrap();
        assert_eq!(model.param_count(), cfg.param_total());
        let named = model.named_params();
        let text_encoder: usize = named
            .iter()
            .filter(|(n, _)| n.starts_with("text.encoder."))
            .map(|(_, t)| t.numel())
            .sum();
        assert_eq!(text_encoder, cfg.param_breakdown()[2].1);
    }

    #[test]
    fn generation_respects_length_bounds() {
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                d_model: 8,
                n_heads: 2,
                n_layers_text: 1,
                n_layers_text_pose: 1,
                mlp_hidden: 8,
                kan_hidden: 4,
                max_positions: 20,
                ..EncoderConfig::default()
            },
            length_bounds: LengthBounds { l_min: 3, l_max: 6 },
            refinement_steps: 2,
            ..ModelConfig::default()
        };
        let model = SignModel::<f64>::new(cfg, &mut seeded_rng(1)).unwrap();
        let g = model.generate(&[1], &vec![0.1; POSE_DIM], None).unwrap();
        assert!((3..=6).contains(&g.frames));
        assert_eq!(g.coords.len(), g.frames * POSE_DIM);
        assert!(model.generate(&[1, 999], &vec![0.1; POSE_DIM], None).is_err());
    }
}
