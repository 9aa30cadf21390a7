use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment buffers for an ordered parameter list.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar = f64> {
    pub config: AdamConfig,
    pub step_count: u64,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>], config: AdamConfig) -> Result<Self> {
        let ok = |b: f64| b > 0.0 && b < 1.0;
        if !ok(config.beta1) || !ok(config.beta2) || config.epsilon <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "invalid Adam hyperparameters {config:?}"
            )));
        }
        let zeros: Vec<Vec<T>> = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        Ok(Self {
            config,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        })
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<T: Scalar>(params: &[Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != state.first_moment.len() {
        return Err(Error::InvalidArgument(format!(
            "Adam state tracks {} parameters, got {}",
            state.first_moment.len(),
            params.len()
        )));
    }
    let grads = params
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let g = p.grad().ok_or(Error::MissingGradient { index: i })?;
            if g.len() != state.first_moment[i].len() {
                return Err(Error::shape("adam_step", p.shape(), &[g.len()]));
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;

    state.step_count += 1;
    let c = state.config;
    let t = state.step_count as i32;
    let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let lr = T::lit(c.learning_rate);
    let eps = T::lit(c.epsilon);

    for ((p, g), (m, v)) in params
        .iter()
        .zip(&grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        p.update_data(|theta| {
            for i in 0..theta.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: &[f64]) -> Tensor<f64> {
        Tensor::param(v.to_vec(), &[v.len()]).unwrap()
    }

    #[test]
    fn first_step_with_unit_gradient() {
        let p = param(&[0.0, 0.0]);
        p.set_grad(vec![1.0, 1.0]).unwrap();
        let mut st = AdamState::new(std::slice::from_ref(&p), AdamConfig::default()).unwrap();
        adam_step(std::slice::from_ref(&p), &mut st).unwrap();
        let delta = p.to_vec()[0];
        // m̂ = v̂ = 1 after bias correction, so Δθ = -lr / (1 + eps).
        assert!((delta - (-1e-3 / (1.0 + 1e-8))).abs() < 1e-18);
        assert!((delta - (-9.99999995e-4)).abs() < 1e-11);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let p = param(&[0.3, -1.2, 4.0]);
        let before = p.to_vec();
        let mut st = AdamState::new(std::slice::from_ref(&p), AdamConfig::default()).unwrap();
        for _ in 0..10 {
            p.zero_grad();
            adam_step(std::slice::from_ref(&p), &mut st).unwrap();
        }
        assert_eq!(p.to_vec(), before);
    }

    #[test]
    fn equal_gradients_give_equal_updates() {
        let a = param(&[1.0]);
        let b = param(&[1.0]);
        let ps = [a.clone(), b.clone()];
        let mut st = AdamState::new(&ps, AdamConfig::default()).unwrap();
        for k in 0..5 {
            a.set_grad(vec![0.1 * k as f64]).unwrap();
            b.set_grad(vec![0.1 * k as f64]).unwrap();
            adam_step(&ps, &mut st).unwrap();
        }
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let p = param(&[1.0]);
        let mut st = AdamState::new(std::slice::from_ref(&p), AdamConfig::default()).unwrap();
        let err = adam_step(std::slice::from_ref(&p), &mut st).unwrap_err();
        assert!(matches!(err, Error::MissingGradient { index: 0 }));
    }

    #[test]
    fn rejects_bad_betas() {
        let cfg = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(AdamState::<f64>::new(&[], cfg).is_err());
    }
}
