use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute agreement instead.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, element index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares analytic gradients of `f` against central differences
/// `(f(θ+h) − f(θ−h)) / 2h` for every element of every parameter.
///
/// `f` must rebuild its graph on each call and return a scalar. Existing
/// gradient buffers on `params` are overwritten.
pub fn finite_diff_check<T, F>(
    mut f: F,
    params: &[Tensor<T>],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut() -> Result<Tensor<T>>,
{
    if !(h > 0.0 && h <= 1e-2) {
        return Err(Error::InvalidArgument(format!("step h={h} outside (0, 1e-2]")));
    }
    for p in params {
        p.zero_grad();
    }
    let loss = f()?;
    if !loss.item().is_finite() {
        return Err(Error::NonFinite {
            context: "gradient check at unperturbed parameters".into(),
        });
    }
    loss.backward()?;
    drop(loss);
    let analytic: Vec<Vec<T>> = params
        .iter()
        .enumerate()
        .map(|(i, p)| p.grad().ok_or(Error::MissingGradient { index: i }))
        .collect::<Result<_>>()?;

    let hs = T::lit(h);
    let mut eval_at = |p: &Tensor<T>, idx: usize, value: T, pi: usize| -> Result<f64> {
        p.update_data(|d| d[idx] = value);
        let v = f()?.item().to_f64_lossy();
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: format!("gradient check, parameter {pi} element {idx}"),
            });
        }
        Ok(v)
    };

    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    for (pi, p) in params.iter().enumerate() {
        for idx in 0..p.numel() {
            let orig = p.data()[idx];
            let plus = eval_at(p, idx, orig + hs, pi);
            let minus = eval_at(p, idx, orig - hs, pi);
            p.update_data(|d| d[idx] = orig);
            let numeric = (plus? - minus?) / (2.0 * h);
            let a = analytic[pi][idx].to_f64_lossy();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > max_rel || worst.is_none() {
                max_rel = max_rel.max(rel);
                worst = Some((pi, idx));
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst,
        checked,
        tolerance: tol,
        passed: max_rel <= tol,
    })
}
