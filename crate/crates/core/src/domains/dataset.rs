use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Tensor};

/// Labeled instances drawn from a single domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDataset {
    domain_id: String,
    inputs: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    metadata: BTreeMap<String, String>,
}

impl DomainDataset {
    pub fn new(
        domain_id: impl Into<String>,
        inputs: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let domain_id = domain_id.into();
        if domain_id.is_empty() || domain_id.chars().any(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!(
                "domain id {domain_id:?} must be nonempty without whitespace"
            )));
        }
        if inputs.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "inputs must be n x d, got {:?}",
                inputs.shape()
            )));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::InvalidArgument("num_classes must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            domain_id,
            inputs,
            labels,
            num_classes,
            metadata: BTreeMap::new(),
        })
    }

    /// Attaches a metadata entry. Keys and values may not contain `=` or newlines.
    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Result<Self> {
        let key = key.into();
        let value = value.to_string();
        if key.is_empty() || key.contains(['=', '\n', '\r']) || key.chars().any(char::is_whitespace)
        {
            return Err(Error::InvalidArgument(format!("bad metadata key {key:?}")));
        }
        if value.contains(['\n', '\r']) {
            return Err(Error::InvalidArgument(format!("bad metadata value {value:?}")));
        }
        self.metadata.insert(key, value);
        Ok(self)
    }

    pub fn domain_id(&self) -> &str {
        &self.domain_id
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    /// Rows at `indices`, in order (repeats allowed). Metadata is carried over.
    pub fn select(&self, indices: &[usize]) -> Self {
        let d = self.input_dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.input(i));
            labels.push(self.labels[i]);
        }
        Self {
            domain_id: self.domain_id.clone(),
            inputs: Tensor::matrix(indices.len(), d, data).expect("rows of a valid dataset"),
            labels,
            num_classes: self.num_classes,
            metadata: self.metadata.clone(),
        }
    }

    /// Same labels and metadata with new inputs.
    pub fn with_inputs(&self, inputs: Tensor) -> Result<Self> {
        if inputs.shape() != self.inputs.shape() {
            return Err(Error::Shape(format!(
                "replacement inputs {:?} vs {:?}",
                inputs.shape(),
                self.inputs.shape()
            )));
        }
        Ok(Self {
            inputs,
            ..self.clone()
        })
    }

    /// Concatenates datasets into one pool named `domain_id`.
    pub fn concat(domain_id: &str, parts: &[&DomainDataset]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let d = first.input_dim();
        let c = first.num_classes;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.input_dim() != d || p.num_classes != c {
                return Err(Error::Shape(format!(
                    "cannot merge domain {} ({}d, {} classes) with {}d, {} classes",
                    p.domain_id,
                    p.input_dim(),
                    p.num_classes,
                    d,
                    c
                )));
            }
            data.extend_from_slice(p.inputs.data());
            labels.extend_from_slice(&p.labels);
        }
        let n = labels.len();
        Self::new(domain_id, Tensor::matrix(n, d, data)?, labels, c)
    }

    /// Instances per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}
