//! Kolmogorov–Arnold layers and the token-wise KAN feed-forward block.
//!
//! Every edge `p → q` carries its own univariate function
//!
//! ```text
//! φ_{q,p}(x) = Σ_i w_{q,p,i} · b_i(x) + u_{q,p} · SiLU(x)
//! b_i(x)     = 1 − tanh((x − g_i) / denominator)^exponent
//! ```
//!
//! over a fixed grid `g_1 < … < g_G`, and a layer output is
//! `y_q = Σ_p φ_{q,p}(x_p)`. Only the weights `w` and `u` are learned.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{const_param, join, randn_param, Parameterized};
use crate::numerics::{Rng64, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KanBasisConfig {
    pub grid_min: f64,
    pub grid_max: f64,
    pub num_grid: usize,
    pub exponent: i32,
    pub denominator: f64,
    pub use_base_branch: bool,
    pub spline_init_scale: f64,
}

impl Default for KanBasisConfig {
    fn default() -> Self {
        Self {
            grid_min: -2.0,
            grid_max: 2.0,
            num_grid: 8,
            exponent: 2,
            denominator: 0.33,
            use_base_branch: true,
            spline_init_scale: 0.667,
        }
    }
}

impl KanBasisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grid_min < self.grid_max) || self.num_grid < 2 || self.denominator <= 0.0 {
            return Err(Error::InvalidArgument(format!("invalid KAN basis {self:?}")));
        }
        if self.exponent < 1 {
            return Err(Error::InvalidArgument("KAN basis exponent must be >= 1".into()));
        }
        Ok(())
    }

    /// Evenly spaced knots on `[grid_min, grid_max]`, endpoints included.
    pub fn grid(&self) -> Vec<f64> {
        let step = (self.grid_max - self.grid_min) / (self.num_grid - 1) as f64;
        (0..self.num_grid)
            .map(|i| self.grid_min + step * i as f64)
            .collect()
    }
}

/// `[b_1(x), …, b_G(x)]`
pub fn basis_eval<T: Scalar>(x: T, cfg: &KanBasisConfig) -> Vec<T> {
    let den = T::lit(cfg.denominator);
    cfg.grid()
        .into_iter()
        .map(|g| T::one() - ((x - T::lit(g)) / den).tanh().powi(cfg.exponent))
        .collect()
}

/// One `n_in → n_out` KAN layer.
#[derive(Debug, Clone)]
pub struct KanLayer<T: Scalar> {
    pub n_in: usize,
    pub n_out: usize,
    pub cfg: KanBasisConfig,
    grid: Vec<T>,
    /// `[n_out, n_in, num_grid]`
    pub spline_weights: Tensor<T>,
    /// `[n_out, n_in]`, present iff the base branch is enabled.
    pub base_weights: Option<Tensor<T>>,
}

impl<T: Scalar> KanLayer<T> {
    /// Spline weights ~ N(0, (scale/√(n_in·G))²), base weights ~ N(0, 1/n_in).
    pub fn new(rng: &mut Rng64, n_in: usize, n_out: usize, cfg: &KanBasisConfig) -> Result<Self> {
        cfg.validate()?;
        let g = cfg.num_grid;
        let spline_std = cfg.spline_init_scale / ((n_in * g) as f64).sqrt();
        let spline_weights = randn_param(rng, &[n_out, n_in, g], spline_std);
        let base_weights = cfg
            .use_base_branch
            .then(|| randn_param(rng, &[n_out, n_in], 1.0 / (n_in as f64).sqrt()));
        Ok(Self::assemble(n_in, n_out, cfg, spline_weights, base_weights))
    }

    pub fn zeros(n_in: usize, n_out: usize, cfg: &KanBasisConfig) -> Result<Self> {
        cfg.validate()?;
        let spline_weights = const_param(&[n_out, n_in, cfg.num_grid], 0.0);
        let base_weights = cfg
            .use_base_branch
            .then(|| const_param(&[n_out, n_in], 0.0));
        Ok(Self::assemble(n_in, n_out, cfg, spline_weights, base_weights))
    }

    fn assemble(
        n_in: usize,
        n_out: usize,
        cfg: &KanBasisConfig,
        spline_weights: Tensor<T>,
        base_weights: Option<Tensor<T>>,
    ) -> Self {
        Self {
            n_in,
            n_out,
            cfg: cfg.clone(),
            grid: cfg.grid().into_iter().map(T::lit).collect(),
            spline_weights,
            base_weights,
        }
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    /// Rows of `x: [N, n_in]` mapped to `[N, n_out]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match *x.shape() {
            [_, n] if n == self.n_in => {}
            _ => return Err(Error::shape("kan_layer_forward", x.shape(), &[self.n_in])),
        }
        let g = self.cfg.num_grid;
        let basis = x.switch_basis(&self.grid, T::lit(self.cfg.denominator), self.cfg.exponent)?;
        let w = self.spline_weights.reshape(&[self.n_out, self.n_in * g])?;
        let y = basis.matmul_t(&w)?;
        match &self.base_weights {
            Some(bw) => y.add(&x.silu().matmul_t(bw)?),
            None => Ok(y),
        }
    }

    /// Single input vector to a single output vector.
    pub fn forward_vec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.n_in {
            return Err(Error::shape("kan_layer_forward", &[x.len()], &[self.n_in]));
        }
        Ok(self.forward(&Tensor::new(x.to_vec(), &[1, self.n_in])?)?.to_vec())
    }

    /// `n_out·n_in·G (+ n_out·n_in with the base branch)`
    pub fn count(n_in: usize, n_out: usize, cfg: &KanBasisConfig) -> usize {
        let base = if cfg.use_base_branch { n_in * n_out } else { 0 };
        n_in * n_out * cfg.num_grid + base
    }
}

impl<T: Scalar> Parameterized<T> for KanLayer<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((join(prefix, "spline_weights"), self.spline_weights.clone()));
        if let Some(b) = &self.base_weights {
            out.push((join(prefix, "base_weights"), b.clone()));
        }
    }
}

/// Two KAN layers with width profile `[d, h, d]`, then dropout.
#[derive(Debug, Clone)]
pub struct KanFfn<T: Scalar> {
    pub layers: [KanLayer<T>; 2],
    pub dropout: f64,
}

impl<T: Scalar> KanFfn<T> {
    pub fn new(rng: &mut Rng64, d: usize, h: usize, cfg: &KanBasisConfig, dropout: f64) -> Result<Self> {
        let l1 = KanLayer::new(rng, d, h, cfg)?;
        let l2 = KanLayer::new(rng, h, d, cfg)?;
        Ok(Self {
            layers: [l1, l2],
            dropout,
        })
    }

    pub fn from_layers(l1: KanLayer<T>, l2: KanLayer<T>, dropout: f64) -> Result<Self> {
        if l1.n_out != l2.n_in || l1.n_in != l2.n_out {
            return Err(Error::InvalidArgument(format!(
                "KAN-FFN layers must map d→h→d, got {}→{} and {}→{}",
                l1.n_in, l1.n_out, l2.n_in, l2.n_out
            )));
        }
        Ok(Self {
            layers: [l1, l2],
            dropout,
        })
    }

    pub fn d_model(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].n_out
    }

    /// Token-wise map over `[tokens, d]`. Dropout is applied only when an
    /// RNG is supplied (training).
    pub fn forward(&self, x: &Tensor<T>, rng: Option<&mut Rng64>) -> Result<Tensor<T>> {
        let y = self.layers[1].forward(&self.layers[0].forward(x)?)?;
        match rng {
            Some(r) => y.dropout(self.dropout, r),
            None => Ok(y),
        }
    }

    /// `[batch, time, d]` to `[batch, time, d]`.
    pub fn forward_batched(&self, x: &Tensor<T>, rng: Option<&mut Rng64>) -> Result<Tensor<T>> {
        let d = self.d_model();
        let [b, t, last] = *x.shape() else {
            return Err(Error::shape("kan_ffn_forward", x.shape(), &[0, 0, d]));
        };
        if last != d {
            return Err(Error::shape("kan_ffn_forward", x.shape(), &[b, t, d]));
        }
        self.forward(&x.reshape(&[b * t, d])?, rng)?
            .reshape(&[b, t, d])
    }

    /// `2·d·h·G + 2·d·h` with the base branch.
    pub fn count(d: usize, h: usize, cfg: &KanBasisConfig) -> usize {
        KanLayer::<T>::count(d, h, cfg) + KanLayer::<T>::count(h, d, cfg)
    }
}

impl<T: Scalar> Parameterized<T> for KanFfn<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.collect_params(&join(prefix, &format!("layers.{i}")), out);
        }
    }
}

/// Per-input L2 norm of the spline weights, pooled over outputs and knots.
pub fn input_importance<T: Scalar>(layer: &KanLayer<T>) -> Vec<T> {
    let g = layer.cfg.num_grid;
    let w = layer.spline_weights.data();
    let mut sq = vec![T::zero(); layer.n_in];
    for q in 0..layer.n_out {
        for (p, acc) in sq.iter_mut().enumerate() {
            let base = (q * layer.n_in + p) * g;
            for &v in &w[base..base + g] {
                *acc += v * v;
            }
        }
    }
    sq.into_iter().map(|v| v.sqrt()).collect()
}

/// Input indices sorted by descending importance (ties by index).
pub fn rank_inputs<T: Scalar>(importance: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..importance.len()).collect();
    idx.sort_by(|&a, &b| {
        importance[b]
            .partial_cmp(&importance[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Output channel whose spline weights on `input_dim` have the largest norm.
pub fn dominant_output<T: Scalar>(layer: &KanLayer<T>, input_dim: usize) -> Result<usize> {
    if input_dim >= layer.n_in {
        return Err(Error::InvalidArgument(format!(
            "input dimension {input_dim} out of range for {} inputs",
            layer.n_in
        )));
    }
    let g = layer.cfg.num_grid;
    let w = layer.spline_weights.data();
    let norms: Vec<T> = (0..layer.n_out)
        .map(|q| {
            let base = (q * layer.n_in + input_dim) * g;
            w[base..base + g].iter().map(|&v| v * v).sum::<T>()
        })
        .collect();
    Ok(rank_inputs(&norms)[0])
}

/// Sweeps one input of one FFN sub-layer with every other input at zero and
/// reads back `output_channel`. No normalization is applied.
pub fn response_curve<T: Scalar>(
    ffn: &KanFfn<T>,
    layer_index: usize,
    input_dim: usize,
    output_channel: usize,
    xs: &[T],
) -> Result<Vec<T>> {
    let layer = ffn.layers.get(layer_index).ok_or_else(|| {
        Error::InvalidArgument(format!("layer index {layer_index} out of range (0..2)"))
    })?;
    if input_dim >= layer.n_in || output_channel >= layer.n_out {
        return Err(Error::InvalidArgument(format!(
            "input {input_dim} / output {output_channel} out of range for a {}→{} layer",
            layer.n_in, layer.n_out
        )));
    }
    let mut probe = vec![T::zero(); xs.len() * layer.n_in];
    for (row, &x) in xs.iter().enumerate() {
        probe[row * layer.n_in + input_dim] = x;
    }
    let y = layer.forward(&Tensor::new(probe, &[xs.len(), layer.n_in])?)?;
    let y = y.data();
    Ok((0..xs.len())
        .map(|row| y[row * layer.n_out + output_channel])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, seeded_rng, silu};

    fn cfg() -> KanBasisConfig {
        KanBasisConfig::default()
    }

    #[test]
    fn grid_is_even_and_increasing() {
        let g = cfg().grid();
        assert_eq!(g.len(), 8);
        assert_eq!(g[0], -2.0);
        assert_eq!(g[7], 2.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn basis_is_one_at_knot_and_vanishes_far_away() {
        let c = cfg();
        for (i, g) in c.grid().into_iter().enumerate() {
            assert_eq!(basis_eval(g, &c)[i], 1.0);
        }
        assert!(basis_eval(1e3, &c).iter().all(|&b: &f64| b.abs() < 1e-12));
        assert!(basis_eval(-1e3, &c).iter().all(|&b: &f64| b.abs() < 1e-12));
    }

    #[test]
    fn basis_one_denominator_off_the_first_knot() {
        let c = cfg();
        let b1 = basis_eval(-2.0 + 0.33, &c)[0];
        // 1 − tanh(1)², evaluated independently via exponentials.
        let e2 = (2.0f64).exp();
        let th = (e2 - 1.0) / (e2 + 1.0);
        assert!((b1 - (1.0 - th * th)).abs() < 1e-12);
        assert!((b1 - 0.41997).abs() < 1e-5);
    }

    #[test]
    fn zero_layer_outputs_zero() {
        let l = KanLayer::<f64>::zeros(3, 2, &cfg()).unwrap();
        assert_eq!(l.forward_vec(&[0.3, -1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn base_only_layer_is_silu() {
        let l = KanLayer::<f64>::zeros(1, 1, &cfg()).unwrap();
        l.base_weights.as_ref().unwrap().set_data(vec![1.0]).unwrap();
        let y = l.forward_vec(&[1.0]).unwrap()[0];
        assert!((y - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((y - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn identical_rows_give_identical_outputs() {
        let c = cfg();
        let l = KanLayer::<f64>::zeros(1, 2, &c).unwrap();
        let mut rng = seeded_rng(3);
        let row: Vec<f64> = crate::numerics::rng::normal_vec(&mut rng, c.num_grid, 0.5);
        let w: Vec<f64> = row.iter().chain(&row).copied().collect();
        l.spline_weights.set_data(w).unwrap();
        l.base_weights.as_ref().unwrap().set_data(vec![0.4, 0.4]).unwrap();
        for x in [-3.0, -0.2, 0.0, 0.9, 4.0] {
            let y = l.forward_vec(&[x]).unwrap();
            assert_eq!(y[0], y[1]);
        }
    }

    #[test]
    fn layer_matches_explicit_edge_sum() {
        let c = cfg();
        let mut rng = seeded_rng(11);
        let l = KanLayer::<f64>::new(&mut rng, 3, 2, &c).unwrap();
        let x = [0.4, -1.3, 2.2];
        let y = l.forward_vec(&x).unwrap();
        let w = l.spline_weights.to_vec();
        let u = l.base_weights.as_ref().unwrap().to_vec();
        for q in 0..2 {
            let mut acc = 0.0;
            for (p, &xp) in x.iter().enumerate() {
                let b = basis_eval(xp, &c);
                for (i, bi) in b.iter().enumerate() {
                    acc += w[(q * 3 + p) * c.num_grid + i] * bi;
                }
                acc += u[q * 3 + p] * silu(xp);
            }
            assert!((acc - y[q]).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let l = KanLayer::<f64>::zeros(3, 2, &cfg()).unwrap();
        assert!(l.forward_vec(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn parameter_count_formula() {
        let c = cfg();
        let mut rng = seeded_rng(0);
        let ffn = KanFfn::<f64>::new(&mut rng, 16, 6, &c, 0.1).unwrap();
        assert_eq!(ffn.param_count(), 2 * 16 * 6 * 8 + 2 * 16 * 6);
        assert_eq!(KanFfn::<f64>::count(16, 6, &c), ffn.param_count());
        let no_base = KanBasisConfig {
            use_base_branch: false,
            ..c
        };
        assert_eq!(KanLayer::<f64>::count(4, 5, &no_base), 4 * 5 * 8);
    }

    #[test]
    fn ffn_is_token_wise() {
        let c = cfg();
        let mut rng = seeded_rng(5);
        let ffn = KanFfn::<f64>::new(&mut rng, 4, 3, &c, 0.1).unwrap();
        let x: Vec<f64> = crate::numerics::rng::normal_vec(&mut rng, 2 * 5 * 4, 1.0);
        let xt = Tensor::new(x.clone(), &[2, 5, 4]).unwrap();
        let y = ffn.forward_batched(&xt, None).unwrap().to_vec();

        // Permute time within each batch item.
        let perm = [3, 0, 4, 1, 2];
        let mut xp = vec![0.0; x.len()];
        for b in 0..2 {
            for (t, &src) in perm.iter().enumerate() {
                xp[(b * 5 + t) * 4..(b * 5 + t + 1) * 4]
                    .copy_from_slice(&x[(b * 5 + src) * 4..(b * 5 + src + 1) * 4]);
            }
        }
        let yp = ffn
            .forward_batched(&Tensor::new(xp, &[2, 5, 4]).unwrap(), None)
            .unwrap()
            .to_vec();
        for b in 0..2 {
            for (t, &src) in perm.iter().enumerate() {
                for k in 0..4 {
                    assert_eq!(yp[(b * 5 + t) * 4 + k], y[(b * 5 + src) * 4 + k]);
                }
            }
        }

        // Perturbing one token moves only that token's output.
        let mut x2 = x.clone();
        x2[(5 + 2) * 4 + 1] += 0.5;
        let y2 = ffn
            .forward_batched(&Tensor::new(x2, &[2, 5, 4]).unwrap(), None)
            .unwrap()
            .to_vec();
        for tok in 0..10 {
            let same = (0..4).all(|k| y[tok * 4 + k] == y2[tok * 4 + k]);
            assert_eq!(same, tok != 7, "token {tok}");
        }

        // A single token equals the two layers applied directly.
        let one = &x[..4];
        let direct = ffn.layers[1]
            .forward_vec(&ffn.layers[0].forward_vec(one).unwrap())
            .unwrap();
        assert_eq!(direct, y[..4].to_vec());
    }

    #[test]
    fn ffn_rejects_wrong_width() {
        let mut rng = seeded_rng(5);
        let ffn = KanFfn::<f64>::new(&mut rng, 4, 3, &cfg(), 0.0).unwrap();
        let x = Tensor::<f64>::zeros(&[1, 2, 5]);
        assert!(ffn.forward_batched(&x, None).is_err());
    }

    #[test]
    fn importance_examples() {
        let c = KanBasisConfig {
            num_grid: 2,
            ..cfg()
        };
        let l = KanLayer::<f64>::zeros(2, 2, &c).unwrap();
        assert_eq!(input_importance(&l), vec![0.0, 0.0]);
        l.spline_weights.set_data(vec![1.0; 8]).unwrap();
        assert_eq!(input_importance(&l), vec![2.0, 2.0]);

        let wide = KanLayer::<f64>::zeros(6, 3, &cfg()).unwrap();
        wide.spline_weights.update_data(|w| {
            for q in 0..3 {
                for i in 0..8 {
                    w[(q * 6 + 3) * 8 + i] = 0.1 * (i as f64 + 1.0);
                }
            }
        });
        let imp = input_importance(&wide);
        assert_eq!(rank_inputs(&imp)[0], 3);
    }

    #[test]
    fn response_curves() {
        let c = cfg();
        let zero = KanFfn::from_layers(
            KanLayer::<f64>::zeros(2, 3, &c).unwrap(),
            KanLayer::<f64>::zeros(3, 2, &c).unwrap(),
            0.0,
        )
        .unwrap();
        let xs: Vec<f64> = (0..=120).map(|i| -3.0 + 0.05 * i as f64).collect();
        assert!(response_curve(&zero, 0, 1, 2, &xs).unwrap().iter().all(|&y| y == 0.0));

        zero.layers[0].base_weights.as_ref().unwrap().update_data(|w| w[2 * 2 + 1] = 1.0);
        let curve = response_curve(&zero, 0, 1, 2, &xs).unwrap();
        for (&x, &y) in xs.iter().zip(&curve) {
            assert!((y - x / (1.0 + (-x).exp())).abs() < 1e-12);
        }
        assert_eq!(curve, response_curve(&zero, 0, 1, 2, &xs).unwrap());
        assert!(response_curve(&zero, 2, 0, 0, &xs).is_err());
        assert!(response_curve(&zero, 0, 2, 0, &xs).is_err());
    }

    #[test]
    fn layer_gradients_match_finite_differences() {
        let c = cfg();
        let mut rng = seeded_rng(21);
        let l = KanLayer::<f64>::new(&mut rng, 3, 2, &c).unwrap();
        let x = Tensor::param(crate::numerics::rng::normal_vec(&mut rng, 4 * 3, 1.0), &[4, 3]).unwrap();
        let mut params = l.params();
        params.push(x.clone());
        let r = finite_diff_check(
            || Ok(l.forward(&x)?.square().sum()),
            &params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn basis_in_unit_interval_and_peaks_at_own_knot(x in -5.0f64..5.0) {
                let c = KanBasisConfig::default();
                let b = basis_eval(x, &c);
                for (i, g) in c.grid().into_iter().enumerate() {
                    prop_assert!((0.0..=1.0).contains(&b[i]));
                    prop_assert!(basis_eval(g, &c)[i] >= b[i]);
                }
            }
        }
    }
}
