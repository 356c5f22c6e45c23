//! Training loop: sharpness-only warm-up followed by UDIM iterations.

use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::linalg::all_finite;
use crate::nn::Activation;
use crate::objective::BatchObjective;
use crate::optim::{sharpness_step, Optimizer, OptimizerConfig, Sharpness};
use crate::rng::{self, streams};
use crate::udim::{udim_step, UdimConfig};
use crate::{DomainDataset, Error, LossKind, Mlp, Result};

/// What a run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// A sharpness stepper (or plain ERM) for every iteration.
    Base(Sharpness),
    /// Warm-up with `UdimConfig::base_sharpness`, then UDIM steps.
    Udim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub loss_kind: LossKind,
    pub iters: usize,
    pub batch_size: usize,
    /// Unique instances per UDIM iteration; `None` keeps `batch_size`.
    pub udim_batch_size: Option<usize>,
    pub eval_every: usize,
    pub seed: u64,
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(Error::InvalidArgument("iters must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if self.udim_batch_size.is_some_and(|b| b < 2) {
            return Err(Error::InvalidArgument("udim_batch_size must be >= 2".into()));
        }
        if self.eval_every == 0 || self.eval_every > self.iters {
            return Err(Error::InvalidArgument(format!(
                "eval_every = {} must lie in 1..={}",
                self.eval_every, self.iters
            )));
        }
        Ok(())
    }
}

/// Number of warm-up iterations, `floor(p * iters)`.
pub fn warmup_iters(fraction: f64, iters: usize) -> usize {
    // The epsilon keeps decimal fractions such as 0.29 * 100 from rounding down.
    ((fraction * iters as f64) + 1e-9).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Sharpness-only iteration of a baseline run.
    Base,
    Warmup,
    Udim,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Base => "base",
            Phase::Warmup => "warmup",
            Phase::Udim => "udim",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub phase: Phase,
    /// Sharpness objective value on the batch.
    pub sam_loss: f64,
    pub grad_norm_term: Option<f64>,
    pub var_match_term: Option<f64>,
    pub loss_gap: Option<f64>,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iter: usize,
    pub domain: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub iters: Vec<IterRecord>,
    pub evals: Vec<EvalRecord>,
}

impl MetricsLog {
    pub const CSV_HEADER: &'static str =
        "iter,phase,sam_loss,grad_norm_term,var_match_term,loss_gap,weight_decay,domain,accuracy";

    /// Training rows first, then `phase = eval` rows keyed by iteration.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::new();
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.iters {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},,",
                r.iter,
                r.phase.name(),
                r.sam_loss,
                opt(r.grad_norm_term),
                opt(r.var_match_term),
                opt(r.loss_gap),
                r.weight_decay
            );
        }
        for e in &self.evals {
            let _ = writeln!(out, "{},eval,,,,,,{},{}", e.iter, e.domain, e.accuracy);
        }
        out
    }

    /// Accuracy of `domain` at every evaluation point, in order.
    pub fn accuracy_curve(&self, domain: &str) -> Vec<(usize, f64)> {
        self.evals
            .iter()
            .filter(|e| e.domain == domain)
            .map(|e| (e.iter, e.accuracy))
            .collect()
    }
}

/// Parameters captured at an evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iter: usize,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Mlp,
    pub log: MetricsLog,
    pub checkpoints: Vec<Checkpoint>,
}

/// Trains a fresh model on the merged source pool.
///
/// Batches are drawn i.i.d. with replacement from a seeded stream. Every
/// `eval_every` iterations (and at the end) the accuracy on each `evals`
/// dataset is logged and the parameters are checkpointed.
pub fn train(
    spec: &TrainSpec,
    method: Method,
    sources: &[DomainDataset],
    evals: &[DomainDataset],
    cfg: &UdimConfig,
    opt: &OptimizerConfig,
) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate()?;
    if sources.is_empty() {
        return Err(Error::InvalidArgument("no source domains".into()));
    }
    let parts: Vec<&DomainDataset> = sources.iter().collect();
    let pool = DomainDataset::concat("source", &parts)?;
    let mut model = Mlp::with_activation(&spec.layer_dims, spec.activation, spec.loss_kind, spec.seed)?;
    model.check_batch(&pool)?;
    for e in evals {
        model.check_batch(e)?;
    }

    let mut optimizer = Optimizer::new(cfg.optimizer_config(opt))?;
    let mut batches = rng::stream(spec.seed, streams::BATCHES);
    let warmup = match method {
        Method::Base(_) => spec.iters,
        Method::Udim => warmup_iters(cfg.warmup_fraction, spec.iters),
    };
    let mut log = MetricsLog::default();
    let mut checkpoints = Vec::new();

    for iter in 1..=spec.iters {
        let record = if iter <= warmup {
            let (kind, phase) = match method {
                Method::Base(kind) => (kind, Phase::Base),
                Method::Udim => (cfg.base_sharpness, Phase::Warmup),
            };
            let batch = sample(&pool, spec.batch_size, &mut batches);
            let weight_decay = optimizer.weight_decay_value(model.params());
            let mut obj = BatchObjective::new(&mut model, &batch)?;
            let report = sharpness_step(&mut obj, kind, &mut optimizer)?;
            IterRecord {
                iter,
                phase,
                sam_loss: report.objective,
                grad_norm_term: None,
                var_match_term: None,
                loss_gap: None,
                weight_decay,
            }
        } else {
            let size = spec.udim_batch_size.unwrap_or(spec.batch_size).max(2);
            let batch = sample(&pool, size, &mut batches);
            let report = udim_step(&mut model, &batch, cfg, &mut optimizer)?;
            IterRecord {
                iter,
                phase: Phase::Udim,
                sam_loss: report.step.objective,
                grad_norm_term: Some(report.terms.grad_norm_term),
                var_match_term: Some(report.terms.var_match_term),
                loss_gap: Some(report.terms.loss_gap),
                weight_decay: report.weight_decay,
            }
        };
        if !all_finite(model.params()) {
            return Err(Error::NonFinite(format!(
                "parameters after {} iteration {iter}",
                record.phase.name()
            )));
        }
        log.iters.push(record);

        if iter % spec.eval_every == 0 || iter == spec.iters {
            for e in evals {
                log.evals.push(EvalRecord {
                    iter,
                    domain: e.domain_id().to_string(),
                    accuracy: model.accuracy(e)?,
                });
            }
            checkpoints.push(Checkpoint {
                iter,
                params: model.params().to_vec(),
            });
        }
    }
    Ok(TrainOutcome {
        model,
        log,
        checkpoints,
    })
}

fn sample(pool: &DomainDataset, size: usize, rng: &mut rng::Rng) -> DomainDataset {
    let idx: Vec<usize> = (0..size).map(|_| rng.random_range(0..pool.len())).collect();
    pool.select(&idx)
}
