//! Parameterized building blocks shared by the encoders and heads.

use crate::error::Result;
use crate::numerics::rng::normal_vec;
use crate::numerics::{Rng64, Tensor};
use crate::scalar::Scalar;

/// Anything owning learnable tensors. Names are stable and hierarchical
/// (`generator.blocks.0.attn.q.weight`), which checkpoints rely on.
pub trait Parameterized<T: Scalar> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>);

    fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    fn params(&self) -> Vec<Tensor<T>> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Learnable Gaussian-initialized tensor.
pub(crate) fn randn_param<T: Scalar>(rng: &mut Rng64, shape: &[usize], std: f64) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::param(normal_vec(rng, n, std), shape).expect("shape matches draw count")
}

pub(crate) fn const_param<T: Scalar>(shape: &[usize], value: f64) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::param(vec![T::lit(value); n], shape).expect("shape matches")
}

/// `y = x Wᵀ + b` with `W: [out, in]`.
#[derive(Debug, Clone)]
pub struct Linear<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    /// Weights and bias ~ N(0, 1/in).
    pub fn new(rng: &mut Rng64, n_in: usize, n_out: usize) -> Self {
        let std = 1.0 / (n_in as f64).sqrt();
        Self {
            weight: randn_param(rng, &[n_out, n_in], std),
            bias: Some(const_param(&[n_out], 0.0)),
        }
    }

    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            weight: const_param(&[n_out, n_in], 0.0),
            bias: Some(const_param(&[n_out], 0.0)),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn n_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = x.matmul_t(&self.weight)?;
        match &self.bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }

    pub fn count(n_in: usize, n_out: usize) -> usize {
        n_in * n_out + n_out
    }
}

impl<T: Scalar> Parameterized<T> for Linear<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b.clone()));
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: f64,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: const_param(&[d], 1.0),
            beta: const_param(&[d], 0.0),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.layer_norm(&self.gamma, &self.beta, T::lit(self.eps))
    }

    pub fn count(d: usize) -> usize {
        2 * d
    }
}

impl<T: Scalar> Parameterized<T> for LayerNorm<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((join(prefix, "gamma"), self.gamma.clone()));
        out.push((join(prefix, "beta"), self.beta.clone()));
    }
}

/// Learnable lookup table `[rows, dim]`.
#[derive(Debug, Clone)]
pub struct Embedding<T: Scalar> {
    pub table: Tensor<T>,
}

impl<T: Scalar> Embedding<T> {
    pub fn new(rng: &mut Rng64, rows: usize, dim: usize) -> Self {
        Self {
            table: randn_param(rng, &[rows, dim], 1.0 / (dim as f64).sqrt()),
        }
    }

    pub fn rows(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn lookup(&self, ids: &[usize]) -> Result<Tensor<T>> {
        self.table.gather_rows(ids)
    }
}

impl<T: Scalar> Parameterized<T> for Embedding<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((join(prefix, "table"), self.table.clone()));
    }
}

/// Fails with a message naming `context` if any value is NaN or infinite.
pub(crate) fn ensure_finite<T: Scalar>(t: &Tensor<T>, context: impl FnOnce() -> String) -> Result<()> {
    if t.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(crate::error::Error::NonFinite { context: context() })
    }
}
