//! A fixed-architecture multilayer perceptron with a linear classifier head.
//!
//! Parameters live in one flat vector in canonical order: layer by layer,
//! weights row-major (`out x in`) then bias, classifier head last. Every
//! gradient and perturbation in the crate indexes into that order.

mod per_sample;
pub(crate) mod second_order;

pub use per_sample::{per_sample_classifier_grads, variance_match, GradSampleSet, VarianceMatch};
pub use second_order::{directional_grad_diff, grad_input_of_param_grad_norm, InputCurvature};

use std::ops::{Deref, Range};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::linalg::all_finite;
use crate::rng::{self, streams};
use crate::{DomainDataset, Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax cross-entropy.
    CrossEntropy,
    /// `0.5 * ||logits - onehot(y)||^2`.
    MeanSquaredError,
}

/// Which parameters a vector covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    All,
    /// The classifier head `(W, b)` only.
    Classifier,
}

/// A flat parameter-space vector in canonical ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    scope: Scope,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(scope: Scope, values: Vec<f64>) -> Self {
        Self { scope, values }
    }

    pub fn scope(&self) -> Scope {
        self.scope
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        crate::linalg::norm(&self.values)
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

/// Outputs of [`Mlp::forward`], each `n x width`.
#[derive(Debug, Clone)]
pub struct Forward {
    pub features: Tensor,
    pub logits: Tensor,
    pub probs: Tensor,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Cache {
    pub n: usize,
    /// `acts[0]` is the input, `acts[k]` the output of feature layer `k - 1`.
    pub acts: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

impl Cache {
    pub fn features(&self) -> &[f64] {
        self.acts.last().expect("input is always cached")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    loss_kind: LossKind,
    params: Vec<f64>,
}

impl Mlp {
    /// Tanh hidden layers, weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn new(layer_dims: &[usize], loss_kind: LossKind, seed: u64) -> Result<Self> {
        Self::with_activation(layer_dims, Activation::Tanh, loss_kind, seed)
    }

    pub fn with_activation(
        layer_dims: &[usize],
        activation: Activation,
        loss_kind: LossKind,
        seed: u64,
    ) -> Result<Self> {
        validate_dims(layer_dims)?;
        let mut rng = rng::stream(seed, streams::INIT);
        let mut params = Vec::with_capacity(param_count(layer_dims));
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out + fan_out {
                params.push(rng.random_range(-bound..bound));
            }
        }
        Ok(Self {
            dims: layer_dims.to_vec(),
            activations: vec![activation; layer_dims.len() - 2],
            loss_kind,
            params,
        })
    }

    pub fn from_parts(
        dims: Vec<usize>,
        activations: Vec<Activation>,
        loss_kind: LossKind,
        params: Vec<f64>,
    ) -> Result<Self> {
        validate_dims(&dims)?;
        if activations.len() != dims.len() - 2 {
            return Err(Error::Shape(format!(
                "{} activations for {} feature layers",
                activations.len(),
                dims.len() - 2
            )));
        }
        if params.len() != param_count(&dims) {
            return Err(Error::Shape(format!(
                "{} parameters for dims {:?} (expected {})",
                params.len(),
                dims,
                param_count(&dims)
            )));
        }
        if !all_finite(&params) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self {
            dims,
            activations,
            loss_kind,
            params,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss_kind
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.dims[self.dims.len() - 2]
    }

    pub fn num_classes(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn num_params_in(&self, scope: Scope) -> usize {
        match scope {
            Scope::All => self.params.len(),
            Scope::Classifier => self.params.len() - self.classifier_offset(),
        }
    }

    /// Index of the first classifier weight.
    pub fn classifier_offset(&self) -> usize {
        param_count(&self.dims[..self.dims.len() - 1])
    }

    /// Parameter index range of every layer, classifier last.
    pub fn layer_ranges(&self) -> Vec<Range<usize>> {
        let mut out = Vec::with_capacity(self.dims.len() - 1);
        let mut start = 0;
        for pair in self.dims.windows(2) {
            let len = pair[0] * pair[1] + pair[1];
            out.push(start..start + len);
            start += len;
        }
        out
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.params.len()
            )));
        }
        self.params.copy_from_slice(values);
        Ok(())
    }

    pub fn scoped_params(&self, scope: Scope) -> ParamVector {
        let start = match scope {
            Scope::All => 0,
            Scope::Classifier => self.classifier_offset(),
        };
        ParamVector::new(scope, self.params[start..].to_vec())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Forward> {
        let n = self.check_inputs(x)?;
        let cache = self.forward_cache(x.data(), n);
        let c = self.num_classes();
        let mut probs = vec![0.0; n * c];
        for i in 0..n {
            softmax_into(&cache.logits[i * c..(i + 1) * c], &mut probs[i * c..(i + 1) * c]);
        }
        let d_f = self.feature_dim();
        Ok(Forward {
            features: Tensor::matrix(n, d_f, cache.features().to_vec())?,
            logits: Tensor::matrix(n, c, cache.logits.clone())?,
            probs: Tensor::matrix(n, c, probs)?,
        })
    }

    /// Mean per-instance loss over the batch.
    pub fn loss(&self, batch: &DomainDataset) -> Result<f64> {
        self.check_batch(batch)?;
        let cache = self.forward_cache(batch.inputs().data(), batch.len());
        Ok(self.mean_loss(&cache, batch.labels()))
    }

    /// Mean loss and its exact gradient over all parameters.
    pub fn loss_and_grad(&self, batch: &DomainDataset) -> Result<(f64, Vec<f64>)> {
        self.check_batch(batch)?;
        let n = batch.len();
        let cache = self.forward_cache(batch.inputs().data(), n);
        let loss = self.mean_loss(&cache, batch.labels());
        let d_logits = self.mean_loss_dlogits(&cache, batch.labels());
        let (grad, _) = self.backward(&cache, &d_logits, None, false);
        Ok((loss, grad))
    }

    pub fn grad_params(&self, batch: &DomainDataset, scope: Scope) -> Result<ParamVector> {
        let (_, grad) = self.loss_and_grad(batch)?;
        Ok(match scope {
            Scope::All => ParamVector::new(Scope::All, grad),
            Scope::Classifier => {
                ParamVector::new(Scope::Classifier, grad[self.classifier_offset()..].to_vec())
            }
        })
    }

    /// Gradient of the single-instance loss with respect to the input.
    pub fn grad_input(&self, x: &Tensor, y: usize) -> Result<Tensor> {
        let (_, _, dx) = self.instance_grads(x.data(), y)?;
        Tensor::new(x.shape().to_vec(), dx)
    }

    /// Loss, parameter gradient and input gradient of one instance.
    pub(crate) fn instance_grads(&self, x: &[f64], y: usize) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "instance of {} values for input width {}",
                x.len(),
                self.input_dim()
            )));
        }
        self.check_label(y)?;
        let cache = self.forward_cache(x, 1);
        let labels = [y];
        let loss = self.mean_loss(&cache, &labels);
        let d_logits = self.mean_loss_dlogits(&cache, &labels);
        let (grad, dx) = self.backward(&cache, &d_logits, None, true);
        Ok((loss, grad, dx.expect("input gradient requested")))
    }

    /// Fraction of instances whose arg-max logit equals the label.
    pub fn accuracy(&self, batch: &DomainDataset) -> Result<f64> {
        self.check_batch(batch)?;
        let cache = self.forward_cache(batch.inputs().data(), batch.len());
        let c = self.num_classes();
        let correct = batch
            .labels()
            .iter()
            .enumerate()
            .filter(|(i, &y)| argmax(&cache.logits[i * c..(i + 1) * c]) == y)
            .count();
        Ok(correct as f64 / batch.len() as f64)
    }

    pub(crate) fn check_batch(&self, batch: &DomainDataset) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if batch.input_dim() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch width {} vs model input width {}",
                batch.input_dim(),
                self.input_dim()
            )));
        }
        if batch.num_classes() > self.num_classes() {
            return Err(Error::Shape(format!(
                "batch has {} classes, model outputs {}",
                batch.num_classes(),
                self.num_classes()
            )));
        }
        Ok(())
    }

    fn check_label(&self, y: usize) -> Result<()> {
        if y >= self.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {} classes",
                self.num_classes()
            )));
        }
        Ok(())
    }

    fn check_inputs(&self, x: &Tensor) -> Result<usize> {
        let ok = match x.shape() {
            [d] => *d == self.input_dim(),
            [_, d] => *d == self.input_dim(),
            _ => false,
        };
        if !ok {
            return Err(Error::Shape(format!(
                "input shape {:?} for input width {}",
                x.shape(),
                self.input_dim()
            )));
        }
        Ok(x.rows())
    }

    /// Weight and bias slices of layer `l`.
    fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let start = param_count(&self.dims[..=l]);
        let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
        let w = &self.params[start..start + fan_in * fan_out];
        let b = &self.params[start + fan_in * fan_out..start + fan_in * fan_out + fan_out];
        (w, b)
    }

    pub(crate) fn forward_cache(&self, x: &[f64], n: usize) -> Cache {
        let layers = self.dims.len() - 1;
        let mut acts = Vec::with_capacity(layers);
        acts.push(x.to_vec());
        for l in 0..layers - 1 {
            let mut out = affine(&acts[l], n, self.layer(l), self.dims[l], self.dims[l + 1]);
            let act = self.activations[l];
            for v in &mut out {
                *v = act.apply(*v);
            }
            acts.push(out);
        }
        let logits = affine(
            &acts[layers - 1],
            n,
            self.layer(layers - 1),
            self.dims[layers - 1],
            self.dims[layers],
        );
        Cache { n, acts, logits }
    }

    pub(crate) fn row_loss(&self, logits: &[f64], y: usize) -> f64 {
        match self.loss_kind {
            LossKind::CrossEntropy => log_sum_exp(logits) - logits[y],
            LossKind::MeanSquaredError => {
                0.5 * logits
                    .iter()
                    .enumerate()
                    .map(|(c, &o)| {
                        let t = if c == y { 1.0 } else { 0.0 };
                        (o - t) * (o - t)
                    })
                    .sum::<f64>()
            }
        }
    }

    /// Per-instance loss derivative with respect to the logits: the
    /// `probs - onehot` (cross-entropy) or `logits - onehot` (MSE) residual.
    pub(crate) fn row_residual(&self, logits: &[f64], y: usize, out: &mut [f64]) {
        match self.loss_kind {
            LossKind::CrossEntropy => softmax_into(logits, out),
            LossKind::MeanSquaredError => out.copy_from_slice(logits),
        }
        out[y] -= 1.0;
    }

    fn mean_loss(&self, cache: &Cache, labels: &[usize]) -> f64 {
        let c = self.num_classes();
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| self.row_loss(&cache.logits[i * c..(i + 1) * c], y))
            .sum();
        total / labels.len() as f64
    }

    fn mean_loss_dlogits(&self, cache: &Cache, labels: &[usize]) -> Vec<f64> {
        let c = self.num_classes();
        let scale = 1.0 / labels.len() as f64;
        let mut d = vec![0.0; cache.n * c];
        for (i, &y) in labels.iter().enumerate() {
            let row = &mut d[i * c..(i + 1) * c];
            self.row_residual(&cache.logits[i * c..(i + 1) * c], y, row);
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
        d
    }

    /// Backpropagates `d_logits` (and optional extra feature gradients) to
    /// parameter gradients, summed over rows, and optionally to the inputs.
    pub(crate) fn backward(
        &self,
        cache: &Cache,
        d_logits: &[f64],
        d_features: Option<&[f64]>,
        want_input: bool,
    ) -> (Vec<f64>, Option<Vec<f64>>) {
        let n = cache.n;
        let layers = self.dims.len() - 1;
        let mut grad = vec![0.0; self.params.len()];
        let mut upstream = d_logits.to_vec();
        let mut input_grad = None;
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            if l < layers - 1 {
                let act = self.activations[l];
                for (u, a) in upstream.iter_mut().zip(&cache.acts[l + 1]) {
                    *u *= act.derivative_from_output(*a);
                }
            }
            let start = param_count(&self.dims[..=l]);
            let a_in = &cache.acts[l];
            {
                let (gw, gb) = grad[start..start + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                for i in 0..n {
                    let u = &upstream[i * fan_out..(i + 1) * fan_out];
                    let a = &a_in[i * fan_in..(i + 1) * fan_in];
                    for (o, &uo) in u.iter().enumerate() {
                        let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                        for (g, &aj) in row.iter_mut().zip(a) {
                            *g += uo * aj;
                        }
                        gb[o] += uo;
                    }
                }
            }
            if l == 0 && !want_input {
                break;
            }
            let (w, _) = self.layer(l);
            let mut down = vec![0.0; n * fan_in];
            for i in 0..n {
                let u = &upstream[i * fan_out..(i + 1) * fan_out];
                let d = &mut down[i * fan_in..(i + 1) * fan_in];
                for (o, &uo) in u.iter().enumerate() {
                    for (dj, &wj) in d.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *dj += uo * wj;
                    }
                }
            }
            if l == layers - 1 {
                if let Some(extra) = d_features {
                    for (d, e) in down.iter_mut().zip(extra) {
                        *d += e;
                    }
                }
            }
            if l == 0 {
                input_grad = Some(down);
                break;
            }
            upstream = down;
        }
        (grad, input_grad)
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "layer dims {dims:?} need an input and a classifier width"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "layer dims {dims:?} must all be positive"
        )));
    }
    Ok(())
}

/// Parameter count of the chain of layers described by `dims`.
pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
}

fn affine(x: &[f64], n: usize, (w, b): (&[f64], &[f64]), fan_in: usize, fan_out: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * fan_out];
    for i in 0..n {
        let xi = &x[i * fan_in..(i + 1) * fan_in];
        for o in 0..fan_out {
            let wo = &w[o * fan_in..(o + 1) * fan_in];
            let mut acc = b[o];
            for (wj, xj) in wo.iter().zip(xi) {
                acc += wj * xj;
            }
            out[i * fan_out + o] = acc;
        }
    }
    out
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: &[[f64; 2]], labels: &[usize], c: usize) -> DomainDataset {
        let data = rows.iter().flatten().copied().collect();
        DomainDataset::new("t", Tensor::matrix(rows.len(), 2, data).unwrap(), labels.to_vec(), c)
            .unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = Mlp::new(&[2, 8, 2], LossKind::CrossEntropy, 7).unwrap();
        let b = Mlp::new(&[2, 8, 2], LossKind::CrossEntropy, 7).unwrap();
        let bits = |m: &Mlp| m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn rejects_missing_classifier() {
        assert!(Mlp::new(&[2], LossKind::CrossEntropy, 0).is_err());
        assert!(Mlp::new(&[], LossKind::CrossEntropy, 0).is_err());
        assert!(Mlp::new(&[2, 0, 3], LossKind::CrossEntropy, 0).is_err());
    }

    #[test]
    fn param_count_matches_layout() {
        let m = Mlp::new(&[2, 8, 3], LossKind::CrossEntropy, 1).unwrap();
        assert_eq!(m.num_params(), 51);
        assert_eq!(m.classifier_offset(), 24);
        assert_eq!(m.num_params_in(Scope::Classifier), 27);
        let bound = 1.0 / 2f64.sqrt();
        assert!(m.params()[..24].iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn zero_model_gives_uniform_probs() {
        let mut m = Mlp::new(&[2, 4, 3], LossKind::CrossEntropy, 3).unwrap();
        m.params_mut().fill(0.0);
        let x = Tensor::matrix(2, 2, vec![0.3, -1.0, 2.0, 0.5]).unwrap();
        let out = m.forward(&x).unwrap();
        assert_eq!(out.probs.rows(), 2);
        for p in out.probs.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_rejects_bad_width() {
        let m = Mlp::new(&[3, 2], LossKind::CrossEntropy, 0).unwrap();
        let x = Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap();
        assert!(matches!(m.forward(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn uniform_two_class_cross_entropy_is_ln2() {
        let mut m = Mlp::new(&[2, 2], LossKind::CrossEntropy, 0).unwrap();
        m.params_mut().fill(0.0);
        let b = batch(&[[1.0, 2.0], [3.0, -1.0]], &[0, 1], 2);
        assert!((m.loss(&b).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn mse_is_zero_for_exact_one_hot_outputs() {
        // Identity weights map the inputs straight to one-hot logits.
        let m = Mlp::from_parts(
            vec![2, 2],
            vec![],
            LossKind::MeanSquaredError,
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        )
        .unwrap();
        let b = batch(&[[1.0, 0.0], [0.0, 1.0]], &[0, 1], 2);
        assert_eq!(m.loss(&b).unwrap(), 0.0);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let m = Mlp::new(&[2, 2], LossKind::CrossEntropy, 0).unwrap();
        let b = DomainDataset::new("e", Tensor::zeros(vec![0, 2]), vec![], 2).unwrap();
        assert_eq!(m.loss(&b), Err(Error::EmptyBatch));
    }

    #[test]
    fn duplicated_batch_has_same_loss_and_gradient() {
        let m = Mlp::new(&[2, 5, 2], LossKind::CrossEntropy, 11).unwrap();
        let b = batch(&[[0.1, 0.2], [-0.5, 0.7], [1.5, -0.3]], &[0, 1, 1], 2);
        let doubled = b.select(&[0, 1, 2, 0, 1, 2]);
        let (l1, g1) = m.loss_and_grad(&b).unwrap();
        let (l2, g2) = m.loss_and_grad(&doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_vanishes_at_least_squares_optimum() {
        // 1 -> 1 linear MSE model; targets are all 1 (class 0 one-hot),
        // inputs symmetric about zero, so w = 0, b = 1 is the exact minimizer.
        let m = Mlp::from_parts(vec![1, 1], vec![], LossKind::MeanSquaredError, vec![0.0, 1.0])
            .unwrap();
        let b = DomainDataset::new("s", Tensor::matrix(2, 1, vec![-1.0, 1.0]).unwrap(), vec![0, 0], 1)
            .unwrap();
        let g = m.grad_params(&b, Scope::All).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn saturated_linear_model_has_vanishing_input_gradient() {
        let m = Mlp::from_parts(
            vec![2, 2],
            vec![],
            LossKind::CrossEntropy,
            vec![40.0, 0.0, -40.0, 0.0, 0.0, 0.0],
        )
        .unwrap();
        let x = Tensor::vector(vec![1.0, 0.0]).unwrap();
        let g = m.grad_input(&x, 0).unwrap();
        assert_eq!(g.shape(), x.shape());
        assert!(g.norm() < 1e-30);
    }

    #[test]
    fn classifier_scope_is_the_tail() {
        let m = Mlp::new(&[2, 3, 2], LossKind::CrossEntropy, 5).unwrap();
        let b = batch(&[[0.1, 0.2], [-0.5, 0.7]], &[0, 1], 2);
        let all = m.grad_params(&b, Scope::All).unwrap();
        let head = m.grad_params(&b, Scope::Classifier).unwrap();
        assert_eq!(head.scope(), Scope::Classifier);
        assert_eq!(&all[m.classifier_offset()..], head.values());
    }
}
