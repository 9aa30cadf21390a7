//! Token embeddings, post-norm Transformer encoder blocks with a swappable
//! feed-forward sublayer, and the sequence-length head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamnosys::TokenBatch;
use crate::kan::{KanBasisConfig, KanFfn};
use crate::nn::{ensure_finite, join, Embedding, LayerNorm, Linear, Parameterized};
use crate::numerics::{Rng64, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FfnKind {
    Mlp,
    Kan,
}

impl std::fmt::Display for FfnKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FfnKind::Mlp => "mlp",
            FfnKind::Kan => "kan",
        })
    }
}

impl std::str::FromStr for FfnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(FfnKind::Mlp),
            "kan" => Ok(FfnKind::Kan),
            other => Err(Error::InvalidArgument(format!("unknown FFN kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers_text: usize,
    pub n_layers_text_pose: usize,
    /// FFN of the text-pose encoder; the sublayer the ablations swap.
    pub ffn_kind: FfnKind,
    /// FFN of the text encoder.
    pub text_ffn_kind: FfnKind,
    pub mlp_hidden: usize,
    pub kan_hidden: usize,
    /// Text positions available to the learnable positional table.
    pub max_positions: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_heads: 4,
            n_layers_text: 2,
            n_layers_text_pose: 4,
            ffn_kind: FfnKind::Kan,
            text_ffn_kind: FfnKind::Mlp,
            mlp_hidden: 2048,
            kan_hidden: 64,
            max_positions: crate::hamnosys::DEFAULT_MAX_TEXT_LEN,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidArgument(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LengthBounds {
    pub l_min: usize,
    pub l_max: usize,
}

impl Default for LengthBounds {
    fn default() -> Self {
        Self { l_min: 20, l_max: 200 }
    }
}

/// Rounds half away from zero, then clamps into `[l_min, l_max]`.
pub fn finalize_length(l_hat: f64, bounds: LengthBounds) -> usize {
    let r = l_hat.round();
    if r.is_nan() || r <= bounds.l_min as f64 {
        bounds.l_min
    } else if r >= bounds.l_max as f64 {
        bounds.l_max
    } else {
        r as usize
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MultiHeadAttention<T: Scalar> {
    pub n_heads: usize,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
}

impl<T: Scalar> MultiHeadAttention<T> {
    pub fn new(rng: &mut Rng64, d: usize, n_heads: usize) -> Self {
        Self {
            n_heads,
            q: Linear::new(rng, d, d),
            k: Linear::new(rng, d, d),
            v: Linear::new(rng, d, d),
            o: Linear::new(rng, d, d),
        }
    }

    /// Self-attention over `[len, d]`; `key_mask[j] == true` hides key `j`.
    /// Also returns the per-head attention matrices.
    pub fn forward_with_weights(
        &self,
        x: &Tensor<T>,
        key_mask: Option<&[bool]>,
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let d = self.q.n_out();
        let dh = d / self.n_heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let (q, k, v) = (self.q.forward(x)?, self.k.forward(x)?, self.v.forward(x)?);
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut weights = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = q.slice_cols(h * dh, dh)?;
            let kh = k.slice_cols(h * dh, dh)?;
            let vh = v.slice_cols(h * dh, dh)?;
            let w = qh.matmul_t(&kh)?.scale(scale).masked_softmax(key_mask)?;
            heads.push(w.matmul(&vh)?);
            weights.push(w);
        }
        let merged = if heads.len() == 1 {
            heads.pop().expect("one head")
        } else {
            Tensor::concat_cols(&heads)?
        };
        Ok((self.o.forward(&merged)?, weights))
    }

    pub fn forward(&self, x: &Tensor<T>, key_mask: Option<&[bool]>) -> Result<Tensor<T>> {
        Ok(self.forward_with_weights(x, key_mask)?.0)
    }

    pub fn count(d: usize) -> usize {
        4 * Linear::<T>::count(d, d)
    }
}

impl<T: Scalar> Parameterized<T> for MultiHeadAttention<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.q.collect_params(&join(prefix, "q"), out);
        self.k.collect_params(&join(prefix, "k"), out);
        self.v.collect_params(&join(prefix, "v"), out);
        self.o.collect_params(&join(prefix, "o"), out);
    }
}

/// `d → hidden → d` with ReLU, then dropout.
#[derive(Debug, Clone)]
pub struct MlpFfn<T: Scalar> {
    pub lin1: Linear<T>,
    pub lin2: Linear<T>,
    pub dropout: f64,
}

impl<T: Scalar> MlpFfn<T> {
    pub fn forward(&self, x: &Tensor<T>, rng: Option<&mut Rng64>) -> Result<Tensor<T>> {
        let y = self.lin2.forward(&self.lin1.forward(x)?.relu())?;
        match rng {
            Some(r) => y.dropout(self.dropout, r),
            None => Ok(y),
        }
    }

    pub fn count(d: usize, hidden: usize) -> usize {
        Linear::<T>::count(d, hidden) + Linear::<T>::count(hidden, d)
    }
}

#[derive(Debug, Clone)]
pub enum FeedForward<T: Scalar> {
    Mlp(MlpFfn<T>),
    Kan(KanFfn<T>),
}

impl<T: Scalar> FeedForward<T> {
    pub fn new(rng: &mut Rng64, kind: FfnKind, cfg: &EncoderConfig, kan: &KanBasisConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(match kind {
            FfnKind::Mlp => FeedForward::Mlp(MlpFfn {
                lin1: Linear::new(rng, d, cfg.mlp_hidden),
                lin2: Linear::new(rng, cfg.mlp_hidden, d),
                dropout: cfg.dropout,
            }),
            FfnKind::Kan => FeedForward::Kan(KanFfn::new(rng, d, cfg.kan_hidden, kan, cfg.dropout)?),
        })
    }

    pub fn kind(&self) -> FfnKind {
        match self {
            FeedForward::Mlp(_) => FfnKind::Mlp,
            FeedForward::Kan(_) => FfnKind::Kan,
        }
    }

    pub fn forward(&self, x: &Tensor<T>, rng: Option<&mut Rng64>) -> Result<Tensor<T>> {
        match self {
            FeedForward::Mlp(m) => m.forward(x, rng),
            FeedForward::Kan(k) => k.forward(x, rng),
        }
    }

    pub fn count(kind: FfnKind, cfg: &EncoderConfig, kan: &KanBasisConfig) -> usize {
        match kind {
            FfnKind::Mlp => MlpFfn::<T>::count(cfg.d_model, cfg.mlp_hidden),
            FfnKind::Kan => KanFfn::<T>::count(cfg.d_model, cfg.kan_hidden, kan),
        }
    }
}

impl<T: Scalar> Parameterized<T> for FeedForward<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        match self {
            FeedForward::Mlp(m) => {
                m.lin1.collect_params(&join(prefix, "lin1"), out);
                m.lin2.collect_params(&join(prefix, "lin2"), out);
            }
            FeedForward::Kan(k) => k.collect_params(prefix, out),
        }
    }
}

/// Post-norm block: `x ← LN(x + Drop(MHA(x)))`, `x ← LN(x + FFN(x))`.
#[derive(Debug, Clone)]
pub struct EncoderBlock<T: Scalar> {
    pub attn: MultiHeadAttention<T>,
    pub norm1: LayerNorm<T>,
    pub ffn: FeedForward<T>,
    pub norm2: LayerNorm<T>,
    pub dropout: f64,
}

impl<T: Scalar> EncoderBlock<T> {
    pub fn new(rng: &mut Rng64, kind: FfnKind, cfg: &EncoderConfig, kan: &KanBasisConfig) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadAttention::new(rng, cfg.d_model, cfg.n_heads),
            norm1: LayerNorm::new(cfg.d_model),
            ffn: FeedForward::new(rng, kind, cfg, kan)?,
            norm2: LayerNorm::new(cfg.d_model),
            dropout: cfg.dropout,
        })
    }

    pub fn forward(
        &self,
        x: &Tensor<T>,
        key_mask: Option<&[bool]>,
        mut rng: Option<&mut Rng64>,
    ) -> Result<Tensor<T>> {
        let mut a = self.attn.forward(x, key_mask)?;
        if let Some(r) = rng.as_deref_mut() {
            a = a.dropout(self.dropout, r)?;
        }
        let h = self.norm1.forward(&x.add(&a)?)?;
        let f = self.ffn.forward(&h, rng)?;
        self.norm2.forward(&h.add(&f)?)
    }

    pub fn count(kind: FfnKind, cfg: &EncoderConfig, kan: &KanBasisConfig) -> usize {
        MultiHeadAttention::<T>::count(cfg.d_model)
            + 2 * LayerNorm::<T>::count(cfg.d_model)
            + FeedForward::<T>::count(kind, cfg, kan)
    }
}

impl<T: Scalar> Parameterized<T> for EncoderBlock<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.attn.collect_params(&join(prefix, "attn"), out);
        self.norm1.collect_params(&join(prefix, "norm1"), out);
        self.ffn.collect_params(&join(prefix, "ffn"), out);
        self.norm2.collect_params(&join(prefix, "norm2"), out);
    }
}

/// A named stack of blocks; non-finite activations are reported by block.
#[derive(Debug, Clone)]
pub struct EncoderStack<T: Scalar> {
    pub name: String,
    pub blocks: Vec<EncoderBlock<T>>,
}

impl<T: Scalar> EncoderStack<T> {
    pub fn new(
        rng: &mut Rng64,
        name: &str,
        layers: usize,
        kind: FfnKind,
        cfg: &EncoderConfig,
        kan: &KanBasisConfig,
    ) -> Result<Self> {
        let blocks = (0..layers)
            .map(|_| EncoderBlock::new(rng, kind, cfg, kan))
            .collect::<Result<_>>()?;
        Ok(Self {
            name: name.to_string(),
            blocks,
        })
    }

    pub fn forward(
        &self,
        x: &Tensor<T>,
        key_mask: Option<&[bool]>,
        mut rng: Option<&mut Rng64>,
    ) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(&h, key_mask, rng.as_deref_mut())?;
            ensure_finite(&h, || format!("{} layer {i}", self.name))?;
        }
        Ok(h)
    }
}

impl<T: Scalar> Parameterized<T> for EncoderStack<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect_params(&join(prefix, &format!("blocks.{i}")), out);
        }
    }
}

// ---------------------------------------------------------------------------

/// Token + positional embeddings, the text encoder, and the length head.
#[derive(Debug, Clone)]
pub struct TextEncoder<T: Scalar> {
    pub token_embedding: Embedding<T>,
    pub positions: Embedding<T>,
    pub encoder: EncoderStack<T>,
    pub length_head: Linear<T>,
}

impl<T: Scalar> TextEncoder<T> {
    pub fn new(rng: &mut Rng64, vocab_rows: usize, cfg: &EncoderConfig, kan: &KanBasisConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        Ok(Self {
            token_embedding: Embedding::new(rng, vocab_rows, d),
            positions: Embedding::new(rng, cfg.max_positions, d),
            encoder: EncoderStack::new(rng, "text encoder", cfg.n_layers_text, cfg.text_ffn_kind, cfg, kan)?,
            length_head: Linear::new(rng, d, 1),
        })
    }

    /// `E(t) + PE(i)` for one (possibly padded) row of ids.
    pub fn embed_tokens(&self, ids: &[usize]) -> Result<Tensor<T>> {
        if ids.len() > self.positions.rows() {
            return Err(Error::InvalidArgument(format!(
                "text of {} tokens exceeds {} positions",
                ids.len(),
                self.positions.rows()
            )));
        }
        let positions: Vec<usize> = (0..ids.len()).collect();
        self.token_embedding
            .lookup(ids)?
            .add(&self.positions.lookup(&positions)?)
    }

    /// `[batch, len, d]`
    pub fn embed_batch(&self, batch: &TokenBatch) -> Result<Tensor<T>> {
        let rows = batch
            .ids
            .iter()
            .map(|ids| self.embed_tokens(ids))
            .collect::<Result<Vec<_>>>()?;
        let d = self.token_embedding.table.shape()[1];
        Tensor::concat_rows(&rows)?.reshape(&[batch.len(), batch.max_len(), d])
    }

    /// Contextual encoding `[len, d]` of one row; `mask[j]` marks padding.
    pub fn encode(&self, ids: &[usize], mask: &[bool], rng: Option<&mut Rng64>) -> Result<Tensor<T>> {
        if ids.len() != mask.len() {
            return Err(Error::shape("text encode", &[ids.len()], &[mask.len()]));
        }
        let x = self.embed_tokens(ids)?;
        self.encoder.forward(&x, Some(mask), rng)
    }

    /// Mean of the per-token projection over non-padding positions.
    pub fn predict_length(&self, h: &Tensor<T>, mask: &[bool]) -> Result<Tensor<T>> {
        let len = h.shape()[0];
        if mask.len() != len {
            return Err(Error::shape("predict_length", h.shape(), &[mask.len()]));
        }
        let valid = mask.iter().filter(|&&m| !m).count();
        if valid == 0 {
            return Err(Error::InvalidArgument(
                "predict_length: every position is padding".into(),
            ));
        }
        let w = T::one() / T::from_usize_lossy(valid);
        let weights: Vec<T> = mask.iter().map(|&m| if m { T::zero() } else { w }).collect();
        let per_token = self.length_head.forward(h)?;
        Tensor::new(weights, &[1, len])?.matmul(&per_token)?.reshape(&[1])
    }
}

impl<T: Scalar> Parameterized<T> for TextEncoder<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.token_embedding.collect_params(&join(prefix, "token_embedding"), out);
        self.positions.collect_params(&join(prefix, "positions"), out);
        self.encoder.collect_params(&join(prefix, "encoder"), out);
        self.length_head.collect_params(&join(prefix, "length_head"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, seeded_rng};

    fn small_cfg(kind: FfnKind) -> EncoderConfig {
        EncoderConfig {
            d_model: 8,
            n_heads: 2,
            n_layers_text: 1,
            n_layers_text_pose: 1,
            ffn_kind: kind,
            text_ffn_kind: kind,
            mlp_hidden: 12,
            kan_hidden: 5,
            max_positions: 16,
            dropout: 0.0,
        }
    }

    #[test]
    fn finalize_length_examples() {
        let b = LengthBounds::default();
        assert_eq!(finalize_length(57.4, b), 57);
        assert_eq!(finalize_length(57.5, b), 58);
        assert_eq!(finalize_length(7.9, b), 20);
        assert_eq!(finalize_length(512.0, b), 200);
        assert_eq!(finalize_length(-3.0, b), 20);
    }

    #[test]
    fn rejects_heads_not_dividing_width() {
        let cfg = EncoderConfig {
            n_heads: 3,
            ..EncoderConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn embeddings_add_position() {
        let mut rng = seeded_rng(1);
        let te = TextEncoder::<f64>::new(&mut rng, 10, &small_cfg(FfnKind::Mlp), &KanBasisConfig::default()).unwrap();
        let e = te.embed_tokens(&[4, 4]).unwrap().to_vec();
        let pe = te.positions.table.to_vec();
        for j in 0..8 {
            let diff = e[8 + j] - e[j];
            assert!((diff - (pe[8 + j] - pe[j])).abs() < 1e-15);
        }
        te.token_embedding.table.update_data(|d| d.fill(0.0));
        te.positions.table.update_data(|d| d.fill(0.0));
        assert!(te.embed_tokens(&[1, 2, 3]).unwrap().to_vec().iter().all(|&v| v == 0.0));
        assert!(te.embed_tokens(&[1; 17]).is_err());
    }

    #[test]
    fn default_embedding_width() {
        let mut rng = seeded_rng(1);
        let te = TextEncoder::<f64>::new(&mut rng, 212, &EncoderConfig::default(), &KanBasisConfig::default()).unwrap();
        let batch = crate::hamnosys::pad_batch(&[vec![1, 2, 3], vec![1]]).unwrap();
        assert_eq!(te.embed_batch(&batch).unwrap().shape(), &[2, 3, 128]);
    }

    #[test]
    fn attention_ignores_masked_keys() {
        let mut rng = seeded_rng(2);
        let attn = MultiHeadAttention::<f64>::new(&mut rng, 8, 2);
        let x = Tensor::new(crate::numerics::rng::normal_vec(&mut rng, 5 * 8, 1.0), &[5, 8]).unwrap();
        let mask = [false, false, true, false, true];
        let (_, ws) = attn.forward_with_weights(&x, Some(&mask)).unwrap();
        for w in ws {
            let w = w.to_vec();
            for q in 0..5 {
                assert_eq!(w[q * 5 + 2], 0.0);
                assert_eq!(w[q * 5 + 4], 0.0);
                let s: f64 = w[q * 5..q * 5 + 5].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_mlp_block_is_attention_residual_and_norms() {
        let mut rng = seeded_rng(4);
        let cfg = small_cfg(FfnKind::Mlp);
        let block = EncoderBlock::<f64>::new(&mut rng, FfnKind::Mlp, &cfg, &KanBasisConfig::default()).unwrap();
        if let FeedForward::Mlp(m) = &block.ffn {
            for p in [&m.lin1.weight, m.lin1.bias.as_ref().unwrap(), &m.lin2.weight, m.lin2.bias.as_ref().unwrap()] {
                p.update_data(|d| d.fill(0.0));
            }
        }
        let x = Tensor::new(crate::numerics::rng::normal_vec(&mut rng, 3 * 8, 1.0), &[3, 8]).unwrap();
        let y = block.forward(&x, None, None).unwrap().to_vec();
        let h = block.norm1.forward(&x.add(&block.attn.forward(&x, None).unwrap()).unwrap()).unwrap();
        let expected = block.norm2.forward(&h).unwrap().to_vec();
        for (a, b) in y.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ffn_swap_changes_counts_not_shapes() {
        let kan = KanBasisConfig::default();
        let mut rng = seeded_rng(6);
        let x = Tensor::new(crate::numerics::rng::normal_vec(&mut rng, 4 * 8, 1.0), &[4, 8]).unwrap();
        let mut shapes = Vec::new();
        for kind in [FfnKind::Mlp, FfnKind::Kan] {
            let cfg = small_cfg(kind);
            let block = EncoderBlock::<f64>::new(&mut rng, kind, &cfg, &kan).unwrap();
            assert_eq!(block.param_count(), EncoderBlock::<f64>::count(kind, &cfg, &kan));
            shapes.push(block.forward(&x, None, None).unwrap().shape().to_vec());
        }
        assert_eq!(shapes[0], shapes[1]);
        let cfg = small_cfg(FfnKind::Mlp);
        let mlp = 8 * 12 + 12 + 12 * 8 + 8;
        let kan_ffn = 2 * 8 * 5 * 8 + 2 * 8 * 5;
        assert_eq!(
            EncoderBlock::<f64>::count(FfnKind::Kan, &cfg, &kan) - EncoderBlock::<f64>::count(FfnKind::Mlp, &cfg, &kan),
            kan_ffn - mlp
        );
    }

    #[test]
    fn length_prediction_examples() {
        let mut rng = seeded_rng(8);
        let te = TextEncoder::<f64>::new(&mut rng, 10, &small_cfg(FfnKind::Mlp), &KanBasisConfig::default()).unwrap();
        // Projection outputs all equal c when the weights vanish.
        te.length_head.weight.update_data(|d| d.fill(0.0));
        te.length_head.bias.as_ref().unwrap().set_data(vec![42.0]).unwrap();
        let h = Tensor::new(vec![0.3; 3 * 8], &[3, 8]).unwrap();
        assert_eq!(te.predict_length(&h, &[false; 3]).unwrap().item(), 42.0);

        // Per-token values 10 and 20 average to 15.
        te.length_head.bias.as_ref().unwrap().set_data(vec![0.0]).unwrap();
        te.length_head.weight.update_data(|d| {
            d.fill(0.0);
            d[0] = 1.0;
        });
        let mut hv = vec![0.0; 2 * 8];
        hv[0] = 10.0;
        hv[8] = 20.0;
        let h = Tensor::new(hv, &[2, 8]).unwrap();
        assert_eq!(te.predict_length(&h, &[false, false]).unwrap().item(), 15.0);
        assert!(te.predict_length(&h, &[true, true]).is_err());
    }

    #[test]
    fn padding_does_not_change_length_or_states() {
        let mut rng = seeded_rng(9);
        let te = TextEncoder::<f64>::new(&mut rng, 10, &small_cfg(FfnKind::Kan), &KanBasisConfig::default()).unwrap();
        let ids = [1, 4, 7, 2];
        let h1 = te.encode(&ids, &[false; 4], None).unwrap();
        let l1 = te.predict_length(&h1, &[false; 4]).unwrap().item();
        let padded = [1, 4, 7, 2, 0, 0, 0];
        let mask = [false, false, false, false, true, true, true];
        let h2 = te.encode(&padded, &mask, None).unwrap();
        let l2 = te.predict_length(&h2, &mask).unwrap().item();
        assert!((l1 - l2).abs() < 1e-12);
        let (a, b) = (h1.to_vec(), h2.to_vec());
        for i in 0..4 * 8 {
            assert!((a[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        let kan = KanBasisConfig::default();
        for kind in [FfnKind::Mlp, FfnKind::Kan] {
            let mut rng = seeded_rng(12);
            let cfg = small_cfg(kind);
            let block = EncoderBlock::<f64>::new(&mut rng, kind, &cfg, &kan).unwrap();
            let x = Tensor::new(crate::numerics::rng::normal_vec(&mut rng, 4 * 8, 1.0), &[4, 8]).unwrap();
            let target = Tensor::new(crate::numerics::rng::normal_vec(&mut rng, 4 * 8, 1.0), &[4, 8]).unwrap();
            let mask = [false, false, false, true];
            let r = finite_diff_check(
                || block.forward(&x, Some(&mask), None)?.sub(&target)?.square().mean(),
                &block.params(),
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(r.passed, "{kind}: {r:?}");
        }
    }
}
