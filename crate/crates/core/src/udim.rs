//! Unknown-domain inconsistency minimization.
//!
//! One UDIM iteration perturbs every source instance towards higher loss and
//! higher parameter-gradient norm, then descends on the chosen sharpness
//! objective plus `lambda1` times the inconsistency penalty
//! `rho' |grad L_perturbed| + |Var(G_perturbed) - Var(G_source)|`.

use serde::{Deserialize, Serialize};

use crate::linalg::{all_finite, norm};
use crate::nn::second_order::{directional_grad_diff_from, input_curvature_from};
use crate::nn::variance_match;
use crate::objective::BatchObjective;
use crate::optim::{
    apply_search_gradient, sharpness_gradient, Optimizer, OptimizerConfig, Sharpness,
    SharpnessGrad, StepReport,
};
use crate::{DomainDataset, Error, Mlp, Result, Tensor};

const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    /// `x + rho_x * d / |d|`
    Normalized,
    /// `x + rho_x * d`
    Unnormalized,
}

/// Scalars of the method.
///
/// `rho`, `lambda2` and `fd_delta` override the matching optimizer fields
/// through [`UdimConfig::optimizer_config`], so one config drives both the
/// warm-up and the UDIM phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UdimConfig {
    pub rho: f64,
    pub rho_prime: f64,
    pub rho_x: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Flat-region loss tolerance; only the analysis tools read it.
    pub gamma: f64,
    pub warmup_fraction: f64,
    pub perturb_mode: PerturbMode,
    pub base_sharpness: Sharpness,
    pub fd_delta: f64,
}

impl Default for UdimConfig {
    fn default() -> Self {
        Self {
            rho: 0.05,
            rho_prime: 0.05,
            rho_x: 1.0,
            lambda1: 1.0,
            lambda2: 0.0,
            gamma: 0.1,
            warmup_fraction: 0.5,
            perturb_mode: PerturbMode::Normalized,
            base_sharpness: Sharpness::Sam,
            fd_delta: 1e-3,
        }
    }
}

impl UdimConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("rho", self.rho),
            ("rho_prime", self.rho_prime),
            ("rho_x", self.rho_x),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("gamma", self.gamma),
            ("fd_delta", self.fd_delta),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || v.is_nan() {
                return Err(Error::InvalidArgument(format!("{name} = {v} must be >= 0")));
            }
        }
        if !(self.fd_delta > 0.0) {
            return Err(Error::InvalidArgument("fd_delta must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidArgument(format!(
                "warmup_fraction = {} must lie in [0, 1)",
                self.warmup_fraction
            )));
        }
        if self.base_sharpness == Sharpness::Erm {
            return Err(Error::InvalidArgument(
                "base_sharpness must be sam, sagm or gam".into(),
            ));
        }
        Ok(())
    }

    /// `base` with rho, weight decay and the finite-difference step taken from here.
    pub fn optimizer_config(&self, base: &OptimizerConfig) -> OptimizerConfig {
        OptimizerConfig {
            rho: self.rho,
            weight_decay: self.lambda2,
            fd_delta: self.fd_delta,
            ..base.clone()
        }
    }
}

/// A source batch and its inconsistency-aware perturbed twin.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedBatch {
    pub originals: DomainDataset,
    pub perturbed: DomainDataset,
    /// `|x_tilde - x|` per instance.
    pub norms: Vec<f64>,
    /// The ascent direction vanished and the instance was copied unchanged.
    pub degenerate: Vec<bool>,
}

impl PerturbedBatch {
    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|d| **d).count()
    }
}

/// Moves each instance along `grad_x (l + rho' |grad_theta l|)`.
pub fn perturb_batch(m: &mut Mlp, batch: &DomainDataset, cfg: &UdimConfig) -> Result<PerturbedBatch> {
    m.check_batch(batch)?;
    if !(cfg.rho_x >= 0.0) {
        return Err(Error::InvalidArgument(format!("rho_x = {} must be >= 0", cfg.rho_x)));
    }
    let n = batch.len();
    if cfg.rho_x == 0.0 {
        return Ok(PerturbedBatch {
            originals: batch.clone(),
            perturbed: batch.clone(),
            norms: vec![0.0; n],
            degenerate: vec![false; n],
        });
    }
    let d = batch.input_dim();
    let mut data = Vec::with_capacity(n * d);
    let mut norms = Vec::with_capacity(n);
    let mut degenerate = Vec::with_capacity(n);
    for i in 0..n {
        let x = batch.input(i);
        let y = batch.labels()[i];
        let (_, g_theta, g_x) = m.instance_grads(x, y)?;
        let mut dir = g_x.clone();
        if cfg.rho_prime != 0.0 {
            let xt = Tensor::vector(x.to_vec())?;
            let curv = input_curvature_from(m, &xt, y, &g_theta, &g_x, cfg.fd_delta)?;
            for (a, c) in dir.iter_mut().zip(curv.grad.data()) {
                *a += cfg.rho_prime * c;
            }
        }
        let dir_norm = norm(&dir);
        if dir_norm < DEGENERATE_NORM || !dir_norm.is_finite() {
            data.extend_from_slice(x);
            norms.push(0.0);
            degenerate.push(true);
            continue;
        }
        let scale = match cfg.perturb_mode {
            PerturbMode::Normalized => cfg.rho_x / dir_norm,
            PerturbMode::Unnormalized => cfg.rho_x,
        };
        let moved: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + scale * di).collect();
        norms.push(norm(&crate::linalg::sub(&moved, x)));
        data.extend_from_slice(&moved);
        degenerate.push(false);
    }
    let perturbed = batch.with_inputs(Tensor::matrix(n, d, data)?)?;
    Ok(PerturbedBatch {
        originals: batch.clone(),
        perturbed,
        norms,
        degenerate,
    })
}

/// Components of the inconsistency penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InconsistencyTerms {
    /// `grad_norm_term + var_match_term`.
    pub total: f64,
    /// `rho' |grad L_perturbed|`.
    pub grad_norm_term: f64,
    /// `|Var(G_perturbed) - Var(G_source)|`.
    pub var_match_term: f64,
    /// `L_perturbed - L_source`, diagnostic only.
    pub loss_gap: f64,
}

pub fn inconsistency_loss(
    m: &Mlp,
    source: &DomainDataset,
    perturbed: &DomainDataset,
    cfg: &UdimConfig,
) -> Result<InconsistencyTerms> {
    let (terms, _, _) = inconsistency_parts(m, source, perturbed, cfg)?;
    Ok(terms)
}

/// Terms plus the perturbed-batch gradient and the variance-matching gradient.
fn inconsistency_parts(
    m: &Mlp,
    source: &DomainDataset,
    perturbed: &DomainDataset,
    cfg: &UdimConfig,
) -> Result<(InconsistencyTerms, Vec<f64>, Vec<f64>)> {
    if source.len() != perturbed.len() {
        return Err(Error::Shape(format!(
            "source has {} instances, perturbed {}",
            source.len(),
            perturbed.len()
        )));
    }
    let vm = variance_match(m, source, perturbed)?;
    let (l_pert, g_pert) = m.loss_and_grad(perturbed)?;
    let l_src = m.loss(source)?;
    let grad_norm_term = cfg.rho_prime * norm(&g_pert);
    Ok((
        InconsistencyTerms {
            total: grad_norm_term + vm.value,
            grad_norm_term,
            var_match_term: vm.value,
            loss_gap: l_pert - l_src,
        },
        g_pert,
        vm.grad,
    ))
}

/// Gradient of the full UDIM objective at the current parameters, with the
/// perturbed batch and the sharpness ascent point held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct UdimGradient {
    pub sharpness: SharpnessGrad,
    pub terms: InconsistencyTerms,
    /// Gradient of `terms.total`.
    pub inconsistency_grad: Vec<f64>,
    /// `sharpness.grad + lambda1 * inconsistency_grad`, weight decay excluded.
    pub total: Vec<f64>,
}

pub fn udim_gradient(
    m: &mut Mlp,
    source: &DomainDataset,
    perturbed: &DomainDataset,
    cfg: &UdimConfig,
    opt: &OptimizerConfig,
) -> Result<UdimGradient> {
    let sharpness = {
        let mut obj = BatchObjective::new(m, source)?;
        sharpness_gradient(&mut obj, cfg.base_sharpness, opt)?
    };
    let (terms, g_pert, var_grad) = inconsistency_parts(m, source, perturbed, cfg)?;
    check_finite("sharpness gradient", &sharpness.grad)?;
    check_finite("variance-matching gradient", &var_grad)?;

    let mut inconsistency_grad = var_grad;
    let g_pert_norm = norm(&g_pert);
    if cfg.rho_prime != 0.0 && g_pert_norm >= DEGENERATE_NORM {
        // grad |grad L| = H g / |g|, by differencing along the frozen g.
        let hvp = directional_grad_diff_from(m, perturbed, &g_pert, &g_pert, opt.fd_delta)?;
        check_finite("gradient-norm penalty gradient", &hvp)?;
        for (acc, h) in inconsistency_grad.iter_mut().zip(hvp.iter()) {
            *acc += cfg.rho_prime * h;
        }
    }

    let total = if cfg.lambda1 == 0.0 || sharpness.degenerate {
        sharpness.grad.clone()
    } else {
        sharpness
            .grad
            .iter()
            .zip(&inconsistency_grad)
            .map(|(s, i)| s + cfg.lambda1 * i)
            .collect()
    };
    Ok(UdimGradient {
        sharpness,
        terms,
        inconsistency_grad,
        total,
    })
}

fn check_finite(component: &str, v: &[f64]) -> Result<()> {
    if all_finite(v) {
        Ok(())
    } else {
        Err(Error::NonFinite(component.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UdimStepReport {
    pub step: StepReport,
    pub terms: InconsistencyTerms,
    pub weight_decay: f64,
    pub degenerate_instances: usize,
}

/// One UDIM iteration. Rho, weight decay and the finite-difference step come
/// from `opt`; see [`UdimConfig::optimizer_config`].
pub fn udim_step(
    m: &mut Mlp,
    batch: &DomainDataset,
    cfg: &UdimConfig,
    opt: &mut Optimizer,
) -> Result<UdimStepReport> {
    if batch.len() < 2 {
        return Err(Error::VarianceUnavailable(batch.len()));
    }
    cfg.validate()?;
    let pb = perturb_batch(m, batch, cfg)?;
    let ug = udim_gradient(m, batch, &pb.perturbed, cfg, &opt.config().clone())?;
    let weight_decay = opt.weight_decay_value(m.params());
    let mut obj = BatchObjective::new(m, batch)?;
    let step = apply_search_gradient(&mut obj, opt, &ug.sharpness, &ug.total)?;
    Ok(UdimStepReport {
        step,
        terms: ug.terms,
        weight_decay,
        degenerate_instances: pb.degenerate_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LossKind;

    fn toy_batch() -> DomainDataset {
        let data = vec![0.2, -0.4, 1.0, 0.3, -0.7, 0.9, 0.1, 0.1];
        DomainDataset::new("toy", Tensor::matrix(4, 2, data).unwrap(), vec![0, 1, 1, 0], 2).unwrap()
    }

    #[test]
    fn zero_radius_perturbation_is_identity() {
        let mut m = Mlp::new(&[2, 6, 2], LossKind::CrossEntropy, 3).unwrap();
        let b = toy_batch();
        let cfg = UdimConfig {
            rho_x: 0.0,
            ..Default::default()
        };
        let pb = perturb_batch(&mut m, &b, &cfg).unwrap();
        assert_eq!(pb.perturbed, b);
    }

    #[test]
    fn normalized_perturbation_has_length_rho_x() {
        let mut m = Mlp::new(&[2, 6, 2], LossKind::CrossEntropy, 3).unwrap();
        let before = m.clone();
        let b = toy_batch();
        let cfg = UdimConfig {
            rho_x: 0.3,
            ..Default::default()
        };
        let pb = perturb_batch(&mut m, &b, &cfg).unwrap();
        assert_eq!(m, before);
        assert_eq!(pb.perturbed.labels(), b.labels());
        for i in 0..b.len() {
            assert!(!pb.degenerate[i]);
            let d = crate::linalg::sub(pb.perturbed.input(i), b.input(i));
            assert!((norm(&d) - 0.3).abs() < 1e-9);
        }
    }

    #[test]
    fn self_inconsistency_is_the_gradient_norm_penalty() {
        let m = Mlp::new(&[2, 6, 2], LossKind::CrossEntropy, 4).unwrap();
        let b = toy_batch();
        let cfg = UdimConfig::default();
        let t = inconsistency_loss(&m, &b, &b, &cfg).unwrap();
        assert_eq!(t.var_match_term, 0.0);
        assert_eq!(t.loss_gap, 0.0);
        let g = m.grad_params(&b, crate::Scope::All).unwrap();
        assert_eq!(t.total, 0.05 * g.norm());
        let zero = UdimConfig {
            rho_prime: 0.0,
            ..cfg
        };
        assert_eq!(inconsistency_loss(&m, &b, &b, &zero).unwrap().total, 0.0);
    }

    #[test]
    fn singleton_batches_are_rejected() {
        let m = Mlp::new(&[2, 2], LossKind::CrossEntropy, 4).unwrap();
        let b = toy_batch().select(&[0]);
        assert!(matches!(
            inconsistency_loss(&m, &b, &b, &UdimConfig::default()),
            Err(Error::VarianceUnavailable(1))
        ));
    }

    #[test]
    fn warmup_fraction_of_one_is_invalid() {
        let cfg = UdimConfig {
            warmup_fraction: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
