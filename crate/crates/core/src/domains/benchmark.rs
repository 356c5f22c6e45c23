use serde::{Deserialize, Serialize};

use super::{make_blobs_domains, make_glyphs_corrupted, make_moons_domains, Corruption};
use crate::{DomainDataset, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Generator {
    Moons { angles_deg: Vec<f64>, noise: f64 },
    Blobs { num_classes: usize, shifts: Vec<Vec<f64>>, scales: Vec<f64> },
    Glyphs { corruption: Corruption, severities: Vec<u32> },
}

impl Generator {
    pub fn name(&self) -> &'static str {
        match self {
            Generator::Moons { .. } => "moons",
            Generator::Blobs { .. } => "blobs",
            Generator::Glyphs { .. } => "glyphs",
        }
    }

    pub fn domain_count(&self) -> usize {
        match self {
            Generator::Moons { angles_deg, .. } => angles_deg.len(),
            Generator::Blobs { shifts, .. } => shifts.len(),
            Generator::Glyphs { severities, .. } => severities.len(),
        }
    }
}

/// Evaluation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Leave one domain out, train on the rest.
    Loodg,
    /// Train on a single source domain.
    Sdg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub generator: Generator,
    pub n_per_domain: usize,
    pub seed: u64,
    pub scenario: Scenario,
    /// Indices of the source domains.
    pub sources: Vec<usize>,
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        let count = self.generator.domain_count();
        if count < 2 {
            return Err(Error::InvalidArgument(format!(
                "a benchmark needs >= 2 domains, got {count}"
            )));
        }
        for (i, s) in self.sources.iter().enumerate() {
            if *s >= count {
                return Err(Error::InvalidArgument(format!(
                    "source index {s} out of range for {count} domains"
                )));
            }
            if self.sources[..i].contains(s) {
                return Err(Error::InvalidArgument(format!("duplicate source index {s}")));
            }
        }
        match self.scenario {
            Scenario::Sdg if self.sources.len() != 1 => Err(Error::InvalidArgument(format!(
                "SDG takes exactly one source, got {}",
                self.sources.len()
            ))),
            Scenario::Loodg if self.sources.len() < 2 || self.sources.len() != count - 1 => {
                Err(Error::InvalidArgument(format!(
                    "LOODG takes all but one of {count} domains as sources, got {}",
                    self.sources.len()
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn targets(&self) -> Vec<usize> {
        (0..self.generator.domain_count())
            .filter(|i| !self.sources.contains(i))
            .collect()
    }

    /// Generates every domain, in generator order.
    pub fn build(&self) -> Result<Vec<DomainDataset>> {
        self.validate()?;
        let n = self.n_per_domain;
        match &self.generator {
            Generator::Moons { angles_deg, noise } => make_moons_domains(n, angles_deg, *noise, self.seed),
            Generator::Blobs {
                num_classes,
                shifts,
                scales,
            } => make_blobs_domains(n, *num_classes, shifts, scales, self.seed),
            Generator::Glyphs {
                corruption,
                severities,
            } => make_glyphs_corrupted(n, *corruption, severities, self.seed),
        }
    }

    /// Rotated two-moons, single source at 0 degrees, targets at 15..60.
    pub fn rotated_moons_sdg(n_per_domain: usize, seed: u64) -> Self {
        Self {
            generator: Generator::Moons {
                angles_deg: vec![0.0, 15.0, 30.0, 45.0, 60.0],
                noise: 0.1,
            },
            n_per_domain,
            seed,
            scenario: Scenario::Sdg,
            sources: vec![0],
        }
    }
}
