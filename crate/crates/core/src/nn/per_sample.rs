//! Closed-form per-sample gradients of the classifier head and the
//! gradient-variance matching penalty built on them.
//!
//! For instance `i` with features `z_i` and residual `r_i` (`probs - onehot`
//! for cross-entropy, `logits - onehot` for MSE) the head gradient is
//! `(r_i z_i^T, r_i)`, flattened as `W` row-major then `b`.

use super::{Cache, LossKind, Mlp, ParamVector, Scope};
use crate::{DomainDataset, Error, Result};

/// Per-sample classifier gradients with their mean and unbiased variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSampleSet {
    samples: Vec<ParamVector>,
    mean: ParamVector,
    variance: Option<ParamVector>,
}

impl GradSampleSet {
    pub fn samples(&self) -> &[ParamVector] {
        &self.samples
    }

    pub fn mean(&self) -> &ParamVector {
        &self.mean
    }

    /// Elementwise variance with divisor `n - 1`; unavailable for one sample.
    pub fn variance(&self) -> Result<&ParamVector> {
        self.variance
            .as_ref()
            .ok_or(Error::VarianceUnavailable(self.samples.len()))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn per_sample_classifier_grads(m: &Mlp, batch: &DomainDataset) -> Result<GradSampleSet> {
    m.check_batch(batch)?;
    let stats = HeadStats::compute(m, batch);
    let p = stats.width;
    let samples = stats
        .samples
        .chunks(p)
        .map(|g| ParamVector::new(Scope::Classifier, g.to_vec()))
        .collect();
    Ok(GradSampleSet {
        samples,
        mean: ParamVector::new(Scope::Classifier, stats.mean),
        variance: stats
            .variance
            .map(|v| ParamVector::new(Scope::Classifier, v)),
    })
}

/// `|| Var(G_perturbed) - Var(G_source) ||_2` and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceMatch {
    pub value: f64,
    /// Gradient with respect to every model parameter. Features are treated
    /// as differentiable inputs to the head, so it reaches the extractor too.
    pub grad: Vec<f64>,
}

pub fn variance_match(
    m: &Mlp,
    source: &DomainDataset,
    perturbed: &DomainDataset,
) -> Result<VarianceMatch> {
    m.check_batch(source)?;
    m.check_batch(perturbed)?;
    for b in [source, perturbed] {
        if b.len() < 2 {
            return Err(Error::VarianceUnavailable(b.len()));
        }
    }
    let src = HeadStats::compute(m, source);
    let pert = HeadStats::compute(m, perturbed);
    let var_s = src.variance.as_ref().expect("n >= 2");
    let var_p = pert.variance.as_ref().expect("n >= 2");
    let diff: Vec<f64> = var_p.iter().zip(var_s).map(|(a, b)| a - b).collect();
    let value = crate::linalg::norm(&diff);

    let mut grad = vec![0.0; m.num_params()];
    if value == 0.0 {
        // Subgradient 0 at the kink.
        return Ok(VarianceMatch { value, grad });
    }
    let unit: Vec<f64> = diff.iter().map(|d| d / value).collect();
    for (stats, sign) in [(&pert, 1.0), (&src, -1.0)] {
        let g = stats.backprop_variance(m, &unit, sign);
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    Ok(VarianceMatch { value, grad })
}

struct HeadStats {
    cache: Cache,
    /// `n x C` loss residuals.
    residuals: Vec<f64>,
    labels: Vec<usize>,
    /// `n x width` flattened per-sample gradients.
    samples: Vec<f64>,
    mean: Vec<f64>,
    variance: Option<Vec<f64>>,
    width: usize,
}

impl HeadStats {
    fn compute(m: &Mlp, batch: &DomainDataset) -> Self {
        let n = batch.len();
        let c = m.num_classes();
        let d = m.feature_dim();
        let width = c * d + c;
        let cache = m.forward_cache(batch.inputs().data(), n);
        let mut residuals = vec![0.0; n * c];
        let mut samples = vec![0.0; n * width];
        for (i, &y) in batch.labels().iter().enumerate() {
            let r = &mut residuals[i * c..(i + 1) * c];
            m.row_residual(&cache.logits[i * c..(i + 1) * c], y, r);
            let z = &cache.features()[i * d..(i + 1) * d];
            let g = &mut samples[i * width..(i + 1) * width];
            for k in 0..c {
                for j in 0..d {
                    g[k * d + j] = r[k] * z[j];
                }
                g[c * d + k] = r[k];
            }
        }

        let mut mean = vec![0.0; width];
        for g in samples.chunks(width) {
            for (acc, v) in mean.iter_mut().zip(g) {
                *acc += v;
            }
        }
        for v in &mut mean {
            *v /= n as f64;
        }
        let variance = (n >= 2).then(|| {
            let mut var = vec![0.0; width];
            for g in samples.chunks(width) {
                for ((acc, v), mu) in var.iter_mut().zip(g).zip(&mean) {
                    *acc += (v - mu) * (v - mu);
                }
            }
            for v in &mut var {
                *v /= (n - 1) as f64;
            }
            var
        });
        Self {
            cache,
            residuals,
            labels: batch.labels().to_vec(),
            samples,
            mean,
            variance,
            width,
        }
    }

    /// Gradient of `sign * <unit, Var(G)>` with respect to all parameters.
    fn backprop_variance(&self, m: &Mlp, unit: &[f64], sign: f64) -> Vec<f64> {
        let n = self.cache.n;
        let c = m.num_classes();
        let d = m.feature_dim();
        let w = self.width;
        let scale = sign * 2.0 / (n - 1) as f64;
        let mut d_logits = vec![0.0; n * c];
        let mut d_features = vec![0.0; n * d];
        let mut up = vec![0.0; w];
        let mut d_res = vec![0.0; c];
        for i in 0..n {
            let g = &self.samples[i * w..(i + 1) * w];
            for k in 0..w {
                up[k] = scale * unit[k] * (g[k] - self.mean[k]);
            }
            let z = &self.cache.features()[i * d..(i + 1) * d];
            let r = &self.residuals[i * c..(i + 1) * c];
            let dz = &mut d_features[i * d..(i + 1) * d];
            for k in 0..c {
                let row = &up[k * d..(k + 1) * d];
                let mut acc = up[c * d + k];
                for j in 0..d {
                    acc += row[j] * z[j];
                    dz[j] += row[j] * r[k];
                }
                d_res[k] = acc;
            }
            let dl = &mut d_logits[i * c..(i + 1) * c];
            match m.loss_kind() {
                LossKind::CrossEntropy => {
                    // residual = softmax - onehot; Jacobian diag(p) - p p^T.
                    let mut p = r.to_vec();
                    p[self.labels[i]] += 1.0;
                    let pr: f64 = p.iter().zip(&d_res).map(|(a, b)| a * b).sum();
                    for k in 0..c {
                        dl[k] = p[k] * (d_res[k] - pr);
                    }
                }
                LossKind::MeanSquaredError => dl.copy_from_slice(&d_res),
            }
        }
        let (grad, _) = m.backward(&self.cache, &d_logits, Some(&d_features), false);
        grad
    }
}
