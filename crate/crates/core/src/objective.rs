//! Differentiable scalar objectives that the steppers and probes act on.

use crate::{DomainDataset, Mlp, Result};

/// A scalar function of a mutable parameter vector with an exact gradient.
pub trait Objective {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn loss(&self) -> f64;
    fn loss_and_grad(&self) -> (f64, Vec<f64>);

    fn grad(&self) -> Vec<f64> {
        self.loss_and_grad().1
    }

    fn num_params(&self) -> usize {
        self.params().len()
    }

    /// Evaluates `f` at `theta + scale * v` and restores theta bitwise.
    fn shifted<T>(&mut self, v: &[f64], scale: f64, f: impl FnOnce(&Self) -> T) -> T
    where
        Self: Sized,
    {
        let saved = self.params().to_vec();
        for (p, d) in self.params_mut().iter_mut().zip(v) {
            *p += scale * d;
        }
        let out = f(self);
        self.params_mut().copy_from_slice(&saved);
        out
    }
}

/// Mean loss of a model over a fixed batch.
pub struct BatchObjective<'a> {
    model: &'a mut Mlp,
    batch: &'a DomainDataset,
}

impl<'a> BatchObjective<'a> {
    /// Validates the batch once so evaluations cannot fail.
    pub fn new(model: &'a mut Mlp, batch: &'a DomainDataset) -> Result<Self> {
        model.check_batch(batch)?;
        Ok(Self { model, batch })
    }

    pub fn model(&self) -> &Mlp {
        self.model
    }

    pub fn model_mut(&mut self) -> &mut Mlp {
        self.model
    }

    pub fn batch(&self) -> &DomainDataset {
        self.batch
    }
}

impl Objective for BatchObjective<'_> {
    fn params(&self) -> &[f64] {
        self.model.params()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.model.params_mut()
    }

    fn loss(&self) -> f64 {
        self.model.loss(self.batch).expect("batch validated at construction")
    }

    fn loss_and_grad(&self) -> (f64, Vec<f64>) {
        self.model
            .loss_and_grad(self.batch)
            .expect("batch validated at construction")
    }
}

/// `0.5 * (theta - center)^T A (theta - center)` with a dense symmetric `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    matrix: Vec<f64>,
    center: Vec<f64>,
    params: Vec<f64>,
}

impl Quadratic {
    /// `matrix` is row-major `dim x dim` and assumed symmetric.
    pub fn new(matrix: Vec<f64>, center: Vec<f64>, start: Vec<f64>) -> Self {
        let dim = start.len();
        assert_eq!(matrix.len(), dim * dim, "matrix must be dim x dim");
        assert_eq!(center.len(), dim, "center must have dim entries");
        Self {
            matrix,
            center,
            params: start,
        }
    }

    pub fn diagonal(diag: &[f64], start: Vec<f64>) -> Self {
        let dim = diag.len();
        let mut matrix = vec![0.0; dim * dim];
        for (i, d) in diag.iter().enumerate() {
            matrix[i * dim + i] = *d;
        }
        Self::new(matrix, vec![0.0; dim], start)
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    /// `A v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let dim = self.params.len();
        (0..dim)
            .map(|i| crate::linalg::dot(&self.matrix[i * dim..(i + 1) * dim], v))
            .collect()
    }

    /// Loss at an arbitrary point.
    pub fn loss_at(&self, theta: &[f64]) -> f64 {
        let d: Vec<f64> = theta.iter().zip(&self.center).map(|(t, c)| t - c).collect();
        0.5 * crate::linalg::dot(&d, &self.apply(&d))
    }

    /// Gradient at an arbitrary point.
    pub fn grad_at(&self, theta: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = theta.iter().zip(&self.center).map(|(t, c)| t - c).collect();
        self.apply(&d)
    }
}

impl Objective for Quadratic {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn loss(&self) -> f64 {
        self.loss_at(&self.params)
    }

    fn loss_and_grad(&self) -> (f64, Vec<f64>) {
        (self.loss_at(&self.params), self.grad_at(&self.params))
    }
}
