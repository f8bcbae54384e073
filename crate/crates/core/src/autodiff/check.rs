use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences over every coordinate of `params`.
///
/// `f` builds the function on a fresh graph from one variable per parameter
/// tensor and returns the one-element output. Returns the largest
/// [`relative_error`] over all coordinates.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();
    let eval = |params: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| g.constant(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    check_against(eval, params, &analytic, eps)
}

/// Largest [`relative_error`] between `analytic` and a five-point central
/// difference of `eval` at `params`, over every coordinate. The stencil is
/// evaluated at `eps` and `2 * eps` and Richardson-extrapolated.
pub fn check_against<F>(eval: F, params: &[Tensor], analytic: &[Vec<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {eps}")));
    }
    if analytic.len() != params.len() || analytic.iter().zip(params).any(|(g, p)| g.len() != p.len()) {
        return Err(Error::Config("gradient layout does not match parameters".into()));
    }
    let eval = |p: &[Tensor]| -> Result<f64> {
        let v = eval(p)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric(format!("function value {v} is not finite")))
        }
    };
    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst = 0.0_f64;
    for (pi, grads) in analytic.iter().enumerate() {
        for (ci, &grad) in grads.iter().enumerate() {
            if !grad.is_finite() {
                return Err(Error::Numeric(format!("backprop gradient {grad} is not finite")));
            }
            let orig = params[pi].data()[ci];
            let mut at = |h: f64| {
                work[pi].data_mut()[ci] = orig + h;
                eval(&work)
            };
            let mut stencil = |h: f64| -> Result<f64> {
                let (p2, p1, m1, m2) = (at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?);
                Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
            };
            let (fine, coarse) = (stencil(eps)?, stencil(2.0 * eps)?);
            work[pi].data_mut()[ci] = orig;
            let numeric = (16.0 * fine - coarse) / 15.0;
            worst = worst.max(relative_error(numeric, grad));
        }
    }
    Ok(worst)
}
