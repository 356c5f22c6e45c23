//! First-order base optimizers and the sharpness-aware steppers (SAM, SAGM, GAM).
//!
//! A stepper first assembles a search gradient from one or more gradient
//! evaluations around theta ([`sharpness_gradient`]) and then hands it to the
//! base optimizer ([`Optimizer::apply`]), which adds weight decay.

use serde::{Deserialize, Serialize};

use crate::linalg::{all_finite, norm};
use crate::objective::Objective;
use crate::{Error, Result};

const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseOptimizer {
    Sgd,
    /// Adam without amsgrad or decoupled decay.
    AdamLite,
}

/// Form of the weight-decay regularizer `lambda2 * R(theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightDecay {
    /// `R = ||theta||_2`, subgradient `theta / ||theta||_2`.
    Norm,
    /// `R = 0.5 ||theta||_2^2`, gradient `theta`.
    HalfSquared,
}

/// Scaling of the SAM ascent vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonScaling {
    /// `rho * g / ||g||`, norm exactly rho.
    UnitNorm,
    /// `rho * g / ||g||^2`.
    InverseSquaredNorm,
}

/// The sharpness objective a stepper minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sharpness {
    /// Plain loss.
    Erm,
    /// `max_{|e| <= rho} L(theta + e)`.
    Sam,
    /// `L(theta) + L(theta + rho g/|g| - alpha g)`.
    Sagm,
    /// `L(theta) + rho max_{|e| <= rho} |grad L(theta + e)|`.
    Gam,
}

impl Sharpness {
    pub fn name(self) -> &'static str {
        match self {
            Sharpness::Erm => "erm",
            Sharpness::Sam => "sam",
            Sharpness::Sagm => "sagm",
            Sharpness::Gam => "gam",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub base: BaseOptimizer,
    pub learning_rate: f64,
    pub rho: f64,
    /// SAGM gradient-alignment coefficient.
    pub alpha: f64,
    pub weight_decay: f64,
    pub decay_form: WeightDecay,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub epsilon_scaling: EpsilonScaling,
    /// Step of the finite-difference Hessian-vector products used by GAM.
    pub fd_delta: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            base: BaseOptimizer::Sgd,
            learning_rate: 0.05,
            rho: 0.05,
            alpha: 0.001,
            weight_decay: 0.0,
            decay_form: WeightDecay::Norm,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            epsilon_scaling: EpsilonScaling::UnitNorm,
            fd_delta: 1e-3,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::InvalidArgument(format!("{what} = {v} is out of range")))
        };
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate", self.learning_rate);
        }
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return bad("rho", self.rho);
        }
        if !self.alpha.is_finite() {
            return bad("alpha", self.alpha);
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad("weight_decay", self.weight_decay);
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", self.beta1);
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", self.beta2);
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon", self.adam_epsilon);
        }
        if !(self.fd_delta > 0.0) {
            return bad("fd_delta", self.fd_delta);
        }
        Ok(())
    }
}

/// Base optimizer with its running state.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    steps: u64,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            steps: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// `lambda2 * R(theta)`.
    pub fn weight_decay_value(&self, params: &[f64]) -> f64 {
        if self.cfg.weight_decay == 0.0 {
            return 0.0;
        }
        let n = norm(params);
        match self.cfg.decay_form {
            WeightDecay::Norm => self.cfg.weight_decay * n,
            WeightDecay::HalfSquared => self.cfg.weight_decay * 0.5 * n * n,
        }
    }

    /// Gradient of `lambda2 * R(theta)`.
    pub fn weight_decay_grad(&self, params: &[f64]) -> Vec<f64> {
        let lambda = self.cfg.weight_decay;
        match self.cfg.decay_form {
            WeightDecay::Norm => {
                let n = norm(params);
                if n == 0.0 {
                    vec![0.0; params.len()]
                } else {
                    params.iter().map(|p| lambda * p / n).collect()
                }
            }
            WeightDecay::HalfSquared => params.iter().map(|p| lambda * p).collect(),
        }
    }

    /// One base update `theta <- theta - eta * step(grad + decay)`.
    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if grad.len() != params.len() {
            return Err(Error::Shape(format!(
                "gradient of length {} for {} parameters",
                grad.len(),
                params.len()
            )));
        }
        let eta = self.cfg.learning_rate;
        let mut full = grad.to_vec();
        if self.cfg.weight_decay != 0.0 {
            for (g, d) in full.iter_mut().zip(self.weight_decay_grad(params)) {
                *g += d;
            }
        }
        match self.cfg.base {
            BaseOptimizer::Sgd => {
                self.steps += 1;
                if eta == 0.0 {
                    return Ok(());
                }
                for (p, g) in params.iter_mut().zip(&full) {
                    *p -= eta * g;
                }
            }
            BaseOptimizer::AdamLite => {
                if self.first_moment.len() != params.len() {
                    self.first_moment = vec![0.0; params.len()];
                    self.second_moment = vec![0.0; params.len()];
                    self.steps = 0;
                }
                self.steps += 1;
                let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
                let c1 = 1.0 - b1.powi(self.steps as i32);
                let c2 = 1.0 - b2.powi(self.steps as i32);
                for (i, g) in full.iter().enumerate() {
                    self.first_moment[i] = b1 * self.first_moment[i] + (1.0 - b1) * g;
                    self.second_moment[i] = b2 * self.second_moment[i] + (1.0 - b2) * g * g;
                }
                if eta == 0.0 {
                    return Ok(());
                }
                for (i, p) in params.iter_mut().enumerate() {
                    let m_hat = self.first_moment[i] / c1;
                    let v_hat = self.second_moment[i] / c2;
                    *p -= eta * m_hat / (v_hat.sqrt() + self.cfg.adam_epsilon);
                }
            }
        }
        Ok(())
    }
}

/// SAM ascent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SamEpsilon {
    pub epsilon: Vec<f64>,
    /// Gradient norm fell below 1e-12; `epsilon` is zero.
    pub degenerate: bool,
}

pub fn sam_epsilon(grad: &[f64], rho: f64, scaling: EpsilonScaling) -> Result<SamEpsilon> {
    if !(rho >= 0.0) {
        return Err(Error::InvalidArgument(format!("rho must be >= 0, got {rho}")));
    }
    let g = norm(grad);
    if g < DEGENERATE_NORM {
        return Ok(SamEpsilon {
            epsilon: vec![0.0; grad.len()],
            degenerate: true,
        });
    }
    let scale = match scaling {
        EpsilonScaling::UnitNorm => rho / g,
        EpsilonScaling::InverseSquaredNorm => rho / (g * g),
    };
    Ok(SamEpsilon {
        epsilon: grad.iter().map(|v| scale * v).collect(),
        degenerate: false,
    })
}

/// Search gradient of a sharpness objective at the current parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SharpnessGrad {
    pub grad: Vec<f64>,
    /// Plain loss at theta.
    pub loss: f64,
    /// Plain gradient at theta.
    pub plain_grad: Vec<f64>,
    /// Value of the sharpness objective (perturbed loss for SAM).
    pub objective: f64,
    pub epsilon_norm: f64,
    /// Gradient evaluated at the displaced point (SAM, SAGM).
    pub perturbed_grad: Option<Vec<f64>>,
    /// GAM's estimate of the maximal gradient norm in the rho-ball.
    pub max_grad_norm: Option<f64>,
    /// The plain gradient vanished and the plain gradient was used instead.
    pub degenerate: bool,
}

pub fn sharpness_gradient<O: Objective>(
    obj: &mut O,
    kind: Sharpness,
    cfg: &OptimizerConfig,
) -> Result<SharpnessGrad> {
    let (loss, g0) = obj.loss_and_grad();
    let plain = |degenerate| SharpnessGrad {
        grad: g0.clone(),
        loss,
        plain_grad: g0.clone(),
        objective: loss,
        epsilon_norm: 0.0,
        perturbed_grad: None,
        max_grad_norm: None,
        degenerate,
    };
    if kind == Sharpness::Erm {
        return Ok(plain(false));
    }
    let g_norm = norm(&g0);
    if g_norm < DEGENERATE_NORM {
        return Ok(plain(true));
    }
    match kind {
        Sharpness::Erm => unreachable!(),
        Sharpness::Sam => {
            if cfg.rho == 0.0 {
                return Ok(plain(false));
            }
            let eps = sam_epsilon(&g0, cfg.rho, cfg.epsilon_scaling)?;
            let (l1, g1) = obj.shifted(&eps.epsilon, 1.0, |o| o.loss_and_grad());
            Ok(SharpnessGrad {
                grad: g1.clone(),
                loss,
                plain_grad: g0,
                objective: l1,
                epsilon_norm: norm(&eps.epsilon),
                perturbed_grad: Some(g1),
                max_grad_norm: None,
                degenerate: false,
            })
        }
        Sharpness::Sagm => {
            let shift: Vec<f64> = g0
                .iter()
                .map(|g| cfg.rho * g / g_norm - cfg.alpha * g)
                .collect();
            let (l1, g1) = obj.shifted(&shift, 1.0, |o| o.loss_and_grad());
            Ok(SharpnessGrad {
                grad: g0.iter().zip(&g1).map(|(a, b)| a + b).collect(),
                loss,
                plain_grad: g0.clone(),
                objective: loss + l1,
                epsilon_norm: norm(&shift),
                perturbed_grad: Some(g1),
                max_grad_norm: None,
                degenerate: false,
            })
        }
        Sharpness::Gam => {
            if cfg.rho == 0.0 {
                return Ok(plain(false));
            }
            let delta = cfg.fd_delta;
            // Ascent direction of |grad L| at theta is H g / |g|.
            let g1 = obj.shifted(&g0, delta / g_norm, |o| o.grad());
            let mut dir: Vec<f64> = g1.iter().zip(&g0).map(|(a, b)| (a - b) / delta).collect();
            let dir_norm = norm(&dir);
            if dir_norm < DEGENERATE_NORM {
                dir = g0.clone();
            }
            let dir_norm = norm(&dir);
            let epsilon: Vec<f64> = dir.iter().map(|d| cfg.rho * d / dir_norm).collect();
            let (max_norm, penalty_grad) = obj.shifted(&epsilon, 1.0, |o| {
                let gp = o.grad();
                let gp_norm = norm(&gp);
                if gp_norm < DEGENERATE_NORM {
                    return (gp_norm, vec![0.0; gp.len()]);
                }
                (gp_norm, gp)
            });
            // Gradient of |grad L(theta + e)| with e frozen: H(theta + e) g'/|g'|.
            let penalty = if max_norm < DEGENERATE_NORM {
                vec![0.0; g0.len()]
            } else {
                let mut shift = epsilon.clone();
                for (s, g) in shift.iter_mut().zip(&penalty_grad) {
                    *s += delta * g / max_norm;
                }
                let moved = obj.shifted(&shift, 1.0, |o| o.grad());
                moved
                    .iter()
                    .zip(&penalty_grad)
                    .map(|(a, b)| (a - b) / delta)
                    .collect()
            };
            Ok(SharpnessGrad {
                grad: g0
                    .iter()
                    .zip(&penalty)
                    .map(|(g, p)| g + cfg.rho * p)
                    .collect(),
                loss,
                plain_grad: g0,
                objective: loss + cfg.rho * max_norm,
                epsilon_norm: cfg.rho,
                perturbed_grad: None,
                max_grad_norm: Some(max_norm),
                degenerate: false,
            })
        }
    }
}

/// Outcome of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub pre_loss: f64,
    pub post_loss: f64,
    /// Value of the sharpness objective before the step.
    pub objective: f64,
    pub epsilon_norm: f64,
    pub max_grad_norm: Option<f64>,
    /// Norm of the search gradient handed to the base optimizer.
    pub grad_norm: f64,
    pub degenerate: bool,
}

/// Applies one step of `kind` with the base optimizer.
pub fn sharpness_step<O: Objective>(
    obj: &mut O,
    kind: Sharpness,
    opt: &mut Optimizer,
) -> Result<StepReport> {
    let sg = sharpness_gradient(obj, kind, &opt.cfg)?;
    apply_search_gradient(obj, opt, &sg, &sg.grad)
}

pub(crate) fn apply_search_gradient<O: Objective>(
    obj: &mut O,
    opt: &mut Optimizer,
    sg: &SharpnessGrad,
    grad: &[f64],
) -> Result<StepReport> {
    if !all_finite(grad) {
        return Err(Error::NonFinite("search gradient".into()));
    }
    opt.apply(obj.params_mut(), grad)?;
    if !all_finite(obj.params()) {
        return Err(Error::NonFinite("parameters after base step".into()));
    }
    Ok(StepReport {
        pre_loss: sg.loss,
        post_loss: obj.loss(),
        objective: sg.objective,
        epsilon_norm: sg.epsilon_norm,
        max_grad_norm: sg.max_grad_norm,
        grad_norm: norm(grad),
        degenerate: sg.degenerate,
    })
}

/// Plain gradient step on the loss.
pub fn base_step<O: Objective>(obj: &mut O, opt: &mut Optimizer) -> Result<StepReport> {
    sharpness_step(obj, Sharpness::Erm, opt)
}

pub fn sam_step<O: Objective>(obj: &mut O, opt: &mut Optimizer) -> Result<StepReport> {
    sharpness_step(obj, Sharpness::Sam, opt)
}

pub fn sagm_step<O: Objective>(obj: &mut O, opt: &mut Optimizer) -> Result<StepReport> {
    sharpness_step(obj, Sharpness::Sagm, opt)
}

pub fn gam_step<O: Objective>(obj: &mut O, opt: &mut Optimizer) -> Result<StepReport> {
    sharpness_step(obj, Sharpness::Gam, opt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::Quadratic;

    fn sgd(lr: f64, rho: f64) -> Optimizer {
        Optimizer::new(OptimizerConfig {
            learning_rate: lr,
            rho,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn sam_epsilon_rescales_to_rho() {
        let e = sam_epsilon(&[3.0, 4.0], 0.05, EpsilonScaling::UnitNorm).unwrap();
        assert!(!e.degenerate);
        assert!((e.epsilon[0] - 0.03).abs() < 1e-15);
        assert!((e.epsilon[1] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn sam_epsilon_printed_variant_divides_by_squared_norm() {
        let e = sam_epsilon(&[3.0, 4.0], 0.05, EpsilonScaling::InverseSquaredNorm).unwrap();
        assert!((norm(&e.epsilon) - 0.05 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn sam_epsilon_flags_zero_gradient() {
        let e = sam_epsilon(&[0.0, 0.0], 0.05, EpsilonScaling::UnitNorm).unwrap();
        assert!(e.degenerate);
        assert_eq!(e.epsilon, vec![0.0, 0.0]);
        assert!(sam_epsilon(&[1.0], -0.1, EpsilonScaling::UnitNorm).is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        for kind in [Sharpness::Erm, Sharpness::Sam, Sharpness::Sagm, Sharpness::Gam] {
            let mut q = Quadratic::diagonal(&[1.0, 10.0], vec![1.0, -1.0]);
            let before = q.params().to_vec();
            sharpness_step(&mut q, kind, &mut sgd(0.0, 0.1)).unwrap();
            assert_eq!(q.params(), &before[..]);
        }
    }

    #[test]
    fn sgd_without_decay_is_plain_descent() {
        let mut q = Quadratic::diagonal(&[1.0, 10.0], vec![1.0, 1.0]);
        base_step(&mut q, &mut sgd(0.1, 0.0)).unwrap();
        assert_eq!(q.params(), &[1.0 - 0.1 * 1.0, 1.0 - 0.1 * 10.0]);
    }

    #[test]
    fn norm_decay_uses_unit_subgradient() {
        let opt = Optimizer::new(OptimizerConfig {
            weight_decay: 0.5,
            ..Default::default()
        })
        .unwrap();
        let g = opt.weight_decay_grad(&[3.0, 4.0]);
        assert!((g[0] - 0.3).abs() < 1e-15 && (g[1] - 0.4).abs() < 1e-15);
        assert_eq!(opt.weight_decay_grad(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert!((opt.weight_decay_value(&[3.0, 4.0]) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn sagm_without_shift_doubles_the_gradient() {
        let mut q = Quadratic::diagonal(&[2.0, 3.0], vec![1.0, 1.0]);
        let cfg = OptimizerConfig {
            rho: 0.0,
            alpha: 0.0,
            ..Default::default()
        };
        let sg = sharpness_gradient(&mut q, Sharpness::Sagm, &cfg).unwrap();
        assert_eq!(sg.grad, vec![4.0, 6.0]);
    }

    #[test]
    fn sagm_perturbed_term_is_sam_gradient_when_alpha_is_zero() {
        let mut q = Quadratic::diagonal(&[2.0, 3.0], vec![1.0, -0.5]);
        let cfg = OptimizerConfig {
            rho: 0.1,
            alpha: 0.0,
            ..Default::default()
        };
        let sagm = sharpness_gradient(&mut q, Sharpness::Sagm, &cfg).unwrap();
        let sam = sharpness_gradient(&mut q, Sharpness::Sam, &cfg).unwrap();
        let a = sagm.perturbed_grad.unwrap();
        for (x, y) in a.iter().zip(&sam.grad) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_gradient_falls_back_to_base_step() {
        let mut q = Quadratic::diagonal(&[1.0, 1.0], vec![0.0, 0.0]);
        for kind in [Sharpness::Sam, Sharpness::Sagm, Sharpness::Gam] {
            let r = sharpness_step(&mut q, kind, &mut sgd(0.1, 0.05)).unwrap();
            assert!(r.degenerate);
        }
    }

    #[test]
    fn gam_max_norm_is_at_least_the_center_norm() {
        let mut q = Quadratic::diagonal(&[1.0, 10.0], vec![0.7, -0.3]);
        let center = norm(&q.grad());
        let cfg = OptimizerConfig {
            rho: 0.1,
            ..Default::default()
        };
        let sg = sharpness_gradient(&mut q, Sharpness::Gam, &cfg).unwrap();
        assert!(sg.max_grad_norm.unwrap() >= center);
    }

    #[test]
    fn rejects_negative_learning_rate() {
        let cfg = OptimizerConfig {
            learning_rate: -1.0,
            ..Default::default()
        };
        assert!(Optimizer::new(cfg).is_err());
    }
}
