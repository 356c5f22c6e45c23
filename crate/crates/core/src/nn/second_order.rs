//! Finite-difference second-order operators along frozen directions.

use super::{Mlp, ParamVector, Scope};
use crate::linalg::norm;
use crate::{DomainDataset, Error, Result, Tensor};

const DEGENERATE_NORM: f64 = 1e-12;

/// `(grad L(theta + delta * v/|v|) - grad L(theta)) / delta`, an estimate of
/// the Hessian-vector product `H v/|v|`. Parameters are restored bitwise.
pub fn directional_grad_diff(
    m: &mut Mlp,
    batch: &DomainDataset,
    v: &[f64],
    delta: f64,
) -> Result<ParamVector> {
    let (_, base) = m.loss_and_grad(batch)?;
    directional_grad_diff_from(m, batch, &base, v, delta)
}

/// As [`directional_grad_diff`], reusing an already computed gradient at theta.
pub(crate) fn directional_grad_diff_from(
    m: &mut Mlp,
    batch: &DomainDataset,
    base: &[f64],
    v: &[f64],
    delta: f64,
) -> Result<ParamVector> {
    if v.len() != m.num_params() {
        return Err(Error::Shape(format!(
            "direction of length {} for {} parameters",
            v.len(),
            m.num_params()
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let v_norm = norm(v);
    if v_norm == 0.0 {
        return Err(Error::InvalidArgument("zero direction".into()));
    }
    let shifted = with_shifted_params(m, v, delta / v_norm, |m| m.loss_and_grad(batch))?;
    let (_, moved) = shifted;
    Ok(ParamVector::new(
        Scope::All,
        moved
            .iter()
            .zip(base)
            .map(|(a, b)| (a - b) / delta)
            .collect(),
    ))
}

/// Runs `f` with parameters `theta + scale * v`, then restores theta exactly.
pub(crate) fn with_shifted_params<T>(
    m: &mut Mlp,
    v: &[f64],
    scale: f64,
    f: impl FnOnce(&Mlp) -> T,
) -> T {
    let saved = m.params().to_vec();
    for (p, d) in m.params_mut().iter_mut().zip(v) {
        *p += scale * d;
    }
    let out = f(m);
    m.params_mut().copy_from_slice(&saved);
    out
}

/// Input gradient of the parameter-gradient norm of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InputCurvature {
    pub grad: Tensor,
    /// The parameter gradient vanished; `grad` is zero.
    pub degenerate: bool,
}

/// `grad_x ||grad_theta l(x, theta)||`, computed as the change of the input
/// gradient along the frozen unit parameter gradient `u`:
/// `(grad_x l(x, theta + delta u) - grad_x l(x, theta)) / delta`.
pub fn grad_input_of_param_grad_norm(
    m: &mut Mlp,
    x: &Tensor,
    y: usize,
    delta: f64,
) -> Result<InputCurvature> {
    let (_, g_theta, g_x) = m.instance_grads(x.data(), y)?;
    input_curvature_from(m, x, y, &g_theta, &g_x, delta)
}

pub(crate) fn input_curvature_from(
    m: &mut Mlp,
    x: &Tensor,
    y: usize,
    g_theta: &[f64],
    g_x: &[f64],
    delta: f64,
) -> Result<InputCurvature> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let g_norm = norm(g_theta);
    if g_norm < DEGENERATE_NORM {
        return Ok(InputCurvature {
            grad: Tensor::zeros(x.shape().to_vec()),
            degenerate: true,
        });
    }
    let (_, _, moved) =
        with_shifted_params(m, g_theta, delta / g_norm, |m| m.instance_grads(x.data(), y))?;
    let grad = moved
        .iter()
        .zip(g_x)
        .map(|(a, b)| (a - b) / delta)
        .collect();
    Ok(InputCurvature {
        grad: Tensor::new(x.shape().to_vec(), grad)?,
        degenerate: false,
    })
}
