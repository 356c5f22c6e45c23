//! Flat `key = value` experiment configuration.
//!
//! Keys carry a section prefix (`benchmark.`, `model.`, `udim.`, `optim.`,
//! `run.`, `analysis.`). Lines starting with `#` are comments. Unknown keys,
//! duplicate keys and keys that do not apply to the chosen generator are
//! errors. [`ExperimentConfig::to_text`] writes every key in a canonical
//! order and parses back to the same config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use udim_core::domains::{BenchmarkSpec, Corruption, Generator, Scenario};
use udim_core::nn::Activation;
use udim_core::optim::{OptimizerConfig, Sharpness};
use udim_core::train::Method;
use udim_core::udim::UdimConfig;
use udim_core::LossKind;

use crate::error::{CliError, CliResult};

/// A trainable method variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Erm,
    Sam,
    Sagm,
    Gam,
    UdimSam,
    UdimSagm,
    UdimGam,
}

impl MethodName {
    pub const ALL: [MethodName; 7] = [
        MethodName::Erm,
        MethodName::Sam,
        MethodName::Sagm,
        MethodName::Gam,
        MethodName::UdimSam,
        MethodName::UdimSagm,
        MethodName::UdimGam,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Erm => "erm",
            MethodName::Sam => "sam",
            MethodName::Sagm => "sagm",
            MethodName::Gam => "gam",
            MethodName::UdimSam => "udim_sam",
            MethodName::UdimSagm => "udim_sagm",
            MethodName::UdimGam => "udim_gam",
        }
    }

    /// Training method plus the sharpness objective used for warm-up.
    pub fn method(self) -> (Method, Sharpness) {
        match self {
            MethodName::Erm => (Method::Base(Sharpness::Erm), Sharpness::Sam),
            MethodName::Sam => (Method::Base(Sharpness::Sam), Sharpness::Sam),
            MethodName::Sagm => (Method::Base(Sharpness::Sagm), Sharpness::Sagm),
            MethodName::Gam => (Method::Base(Sharpness::Gam), Sharpness::Gam),
            MethodName::UdimSam => (Method::Udim, Sharpness::Sam),
            MethodName::UdimSagm => (Method::Udim, Sharpness::Sagm),
            MethodName::UdimGam => (Method::Udim, Sharpness::Gam),
        }
    }

    pub fn is_udim(self) -> bool {
        matches!(self.method().0, Method::Udim)
    }
}

impl FromStr for MethodName {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        MethodName::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| CliError::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub loss: LossKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// Monte-Carlo parameter samples per inconsistency estimate.
    pub samples: usize,
    pub param_grid_radius: f64,
    pub data_grid_radius: f64,
    pub grid_resolution: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkSpec,
    pub model: ModelConfig,
    pub methods: Vec<MethodName>,
    pub udim: UdimConfig,
    pub optim: OptimizerConfig,
    pub iters: usize,
    pub eval_every: usize,
    pub batch_size: usize,
    /// Unique instances per UDIM iteration (each is paired with its perturbed twin).
    pub udim_batch_size: usize,
    pub seeds: Vec<u64>,
    pub train_frac: f64,
    pub val_frac: f64,
    pub analysis: AnalysisConfig,
    /// Output directory; the `--out` flag takes precedence.
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            benchmark: BenchmarkSpec::rotated_moons_sdg(500, 0),
            model: ModelConfig {
                hidden: vec![16, 16],
                activation: Activation::Tanh,
                loss: LossKind::CrossEntropy,
            },
            methods: vec![MethodName::Sam, MethodName::UdimSam],
            udim: UdimConfig::default(),
            optim: OptimizerConfig::default(),
            iters: 2000,
            eval_every: 100,
            batch_size: 32,
            udim_batch_size: 16,
            seeds: vec![0, 1, 2, 3, 4],
            train_frac: 0.6,
            val_frac: 0.2,
            analysis: AnalysisConfig {
                samples: 64,
                param_grid_radius: 0.5,
                data_grid_radius: 0.5,
                grid_resolution: 11,
            },
            out: None,
        }
    }
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn parse(text: &str) -> CliResult<Self> {
        let mut map = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(CliError::Config(format!("line {}: empty key", no + 1)));
            }
            if map.insert(k.to_string(), (no + 1, v.to_string())).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key {k}", no + 1)));
            }
        }
        Ok(Self { map })
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> CliResult<T> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => v
                .parse()
                .map_err(|_| CliError::Config(format!("line {line}: bad value {v:?} for {key}"))),
        }
    }

    fn get_list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> CliResult<Vec<T>> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => parse_list(&v)
                .map_err(|_| CliError::Config(format!("line {line}: bad list {v:?} for {key}"))),
        }
    }

    fn get_enum<T: DeserializeOwned>(&mut self, key: &str, default: T) -> CliResult<T> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => serde_json::from_value(serde_json::Value::String(v.clone()))
                .map_err(|_| CliError::Config(format!("line {line}: bad value {v:?} for {key}"))),
        }
    }

    fn finish(self) -> CliResult<()> {
        match self.map.into_iter().next() {
            None => Ok(()),
            Some((k, (line, _))) => Err(CliError::Config(format!(
                "line {line}: unknown key {k} (or it does not apply to this generator)"
            ))),
        }
    }
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, ()> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| s.trim().parse().map_err(|_| ())).collect()
}

fn enum_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => unreachable!("unit enum variants serialize to strings"),
    }
}

fn join<T: std::fmt::Debug>(v: &[T]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut e = Entries::parse(text)?;
        let d = ExperimentConfig::default();

        let generator = match e.get("benchmark.generator", "moons".to_string())?.as_str() {
            "moons" => Generator::Moons {
                angles_deg: e.get_list("benchmark.angles", vec![0.0, 15.0, 30.0, 45.0, 60.0])?,
                noise: e.get("benchmark.noise", 0.1)?,
            },
            "blobs" => {
                let shifts = match e.take("benchmark.shifts") {
                    None => vec![vec![0.0, 0.0], vec![1.5, 0.0], vec![3.0, 0.0]],
                    Some((line, v)) => v
                        .split(';')
                        .map(|row| row.split_whitespace().map(|x| x.parse::<f64>().map_err(|_| ())).collect())
                        .collect::<Result<Vec<_>, ()>>()
                        .map_err(|_| CliError::Config(format!("line {line}: bad shifts {v:?}")))?,
                };
                let scales = e.get_list("benchmark.scales", vec![1.0; shifts.len()])?;
                Generator::Blobs {
                    num_classes: e.get("benchmark.num_classes", 3)?,
                    shifts,
                    scales,
                }
            }
            "glyphs" => Generator::Glyphs {
                corruption: e.get("benchmark.corruption", Corruption::GaussNoise)?,
                severities: e.get_list("benchmark.severities", vec![0, 1, 2, 3, 4, 5])?,
            },
            other => return Err(CliError::Config(format!("unknown generator {other:?}"))),
        };
        let benchmark = BenchmarkSpec {
            generator,
            n_per_domain: e.get("benchmark.n_per_domain", d.benchmark.n_per_domain)?,
            seed: e.get("benchmark.seed", d.benchmark.seed)?,
            scenario: e.get_enum("benchmark.scenario", Scenario::Sdg)?,
            sources: e.get_list("benchmark.sources", vec![0])?,
        };
        let model = ModelConfig {
            hidden: e.get_list("model.hidden", d.model.hidden)?,
            activation: e.get_enum("model.activation", d.model.activation)?,
            loss: e.get_enum("model.loss", d.model.loss)?,
        };
        let methods = match e.take("run.methods") {
            None => d.methods,
            Some((_, v)) => v.split(',').map(|s| s.trim().parse()).collect::<CliResult<_>>()?,
        };
        let du = d.udim;
        let udim = UdimConfig {
            rho: e.get("udim.rho", du.rho)?,
            rho_prime: e.get("udim.rho_prime", du.rho_prime)?,
            rho_x: e.get("udim.rho_x", du.rho_x)?,
            lambda1: e.get("udim.lambda1", du.lambda1)?,
            lambda2: e.get("udim.lambda2", du.lambda2)?,
            gamma: e.get("udim.gamma", du.gamma)?,
            warmup_fraction: e.get("udim.warmup_fraction", du.warmup_fraction)?,
            perturb_mode: e.get_enum("udim.perturb_mode", du.perturb_mode)?,
            base_sharpness: du.base_sharpness,
            fd_delta: e.get("udim.fd_delta", du.fd_delta)?,
        };
        let dopt = d.optim;
        let optim = OptimizerConfig {
            base: e.get_enum("optim.base", dopt.base)?,
            learning_rate: e.get("optim.learning_rate", dopt.learning_rate)?,
            alpha: e.get("optim.alpha", dopt.alpha)?,
            decay_form: e.get_enum("optim.decay_form", dopt.decay_form)?,
            beta1: e.get("optim.beta1", dopt.beta1)?,
            beta2: e.get("optim.beta2", dopt.beta2)?,
            adam_epsilon: e.get("optim.adam_epsilon", dopt.adam_epsilon)?,
            epsilon_scaling: e.get_enum("optim.epsilon_scaling", dopt.epsilon_scaling)?,
            // Radius, decay and step size are owned by the udim section.
            rho: udim.rho,
            weight_decay: udim.lambda2,
            fd_delta: udim.fd_delta,
        };
        let batch_size = e.get("run.batch_size", d.batch_size)?;
        let cfg = ExperimentConfig {
            benchmark,
            model,
            methods,
            udim,
            optim,
            iters: e.get("run.iters", d.iters)?,
            eval_every: e.get("run.eval_every", d.eval_every)?,
            batch_size,
            udim_batch_size: e.get("run.udim_batch_size", (batch_size / 2).max(2))?,
            seeds: e.get_list("run.seeds", d.seeds)?,
            train_frac: e.get("run.train_frac", d.train_frac)?,
            val_frac: e.get("run.val_frac", d.val_frac)?,
            analysis: AnalysisConfig {
                samples: e.get("analysis.samples", d.analysis.samples)?,
                param_grid_radius: e.get("analysis.param_grid_radius", d.analysis.param_grid_radius)?,
                data_grid_radius: e.get("analysis.data_grid_radius", d.analysis.data_grid_radius)?,
                grid_resolution: e.get("analysis.grid_resolution", d.analysis.grid_resolution)?,
            },
            out: e.take("run.out").map(|(_, v)| PathBuf::from(v)),
        };
        e.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        self.benchmark.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.benchmark.n_per_domain < 6 {
            return bad("benchmark.n_per_domain must be >= 6 so every split keeps each class".into());
        }
        if self.methods.is_empty() {
            return bad("run.methods is empty".into());
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return bad(format!("method {} listed twice", m.as_str()));
            }
        }
        if self.seeds.is_empty() {
            return bad("run.seeds is empty".into());
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return bad(format!("seed {s} listed twice"));
            }
        }
        if self.iters == 0 || self.eval_every == 0 || self.eval_every > self.iters {
            return bad(format!(
                "need 1 <= run.eval_every <= run.iters, got {} and {}",
                self.eval_every, self.iters
            ));
        }
        if self.batch_size == 0 || self.udim_batch_size < 2 {
            return bad("run.batch_size must be >= 1 and run.udim_batch_size >= 2".into());
        }
        if self.model.hidden.contains(&0) {
            return bad("model.hidden widths must be positive".into());
        }
        if !(self.optim.learning_rate > 0.0) {
            return bad("optim.learning_rate must be positive".into());
        }
        self.udim.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.optim.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.analysis.samples == 0 {
            return bad("analysis.samples must be >= 1".into());
        }
        if self.analysis.grid_resolution < 3 || self.analysis.grid_resolution % 2 == 0 {
            return bad("analysis.grid_resolution must be odd and >= 3".into());
        }
        if !(self.analysis.param_grid_radius >= 0.0) || !(self.analysis.data_grid_radius >= 0.0) {
            return bad("grid radii must be >= 0".into());
        }
        // The split itself checks fractions; run it on a dry class count here
        // so bad fractions fail before any work.
        let ok = |f: f64| f > 0.0 && f < 1.0;
        if !ok(self.train_frac) || !ok(self.val_frac) || self.train_frac + self.val_frac >= 1.0 {
            return bad("run.train_frac and run.val_frac must lie in (0,1) with sum < 1".into());
        }
        Ok(())
    }

    /// Layer widths for a benchmark with input width `d` and `c` classes.
    pub fn layer_dims(&self, d: usize, c: usize) -> Vec<usize> {
        let mut dims = vec![d];
        dims.extend(&self.model.hidden);
        dims.push(c);
        dims
    }

    /// Canonical text form; parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let b = &self.benchmark;
        kv("benchmark.generator", b.generator.name().to_string());
        match &b.generator {
            Generator::Moons { angles_deg, noise } => {
                kv("benchmark.angles", join(angles_deg));
                kv("benchmark.noise", format!("{noise:?}"));
            }
            Generator::Blobs {
                num_classes,
                shifts,
                scales,
            } => {
                kv("benchmark.num_classes", num_classes.to_string());
                let rows: Vec<String> = shifts
                    .iter()
                    .map(|r| r.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" "))
                    .collect();
                kv("benchmark.shifts", rows.join("; "));
                kv("benchmark.scales", join(scales));
            }
            Generator::Glyphs {
                corruption,
                severities,
            } => {
                kv("benchmark.corruption", corruption.to_string());
                kv("benchmark.severities", join(severities));
            }
        }
        kv("benchmark.n_per_domain", b.n_per_domain.to_string());
        kv("benchmark.seed", b.seed.to_string());
        kv("benchmark.scenario", enum_name(&b.scenario));
        kv("benchmark.sources", join(&b.sources));
        kv("model.hidden", join(&self.model.hidden));
        kv("model.activation", enum_name(&self.model.activation));
        kv("model.loss", enum_name(&self.model.loss));
        let u = &self.udim;
        kv("udim.rho", format!("{:?}", u.rho));
        kv("udim.rho_prime", format!("{:?}", u.rho_prime));
        kv("udim.rho_x", format!("{:?}", u.rho_x));
        kv("udim.lambda1", format!("{:?}", u.lambda1));
        kv("udim.lambda2", format!("{:?}", u.lambda2));
        kv("udim.gamma", format!("{:?}", u.gamma));
        kv("udim.warmup_fraction", format!("{:?}", u.warmup_fraction));
        kv("udim.perturb_mode", enum_name(&u.perturb_mode));
        kv("udim.fd_delta", format!("{:?}", u.fd_delta));
        let o = &self.optim;
        kv("optim.base", enum_name(&o.base));
        kv("optim.learning_rate", format!("{:?}", o.learning_rate));
        kv("optim.alpha", format!("{:?}", o.alpha));
        kv("optim.decay_form", enum_name(&o.decay_form));
        kv("optim.beta1", format!("{:?}", o.beta1));
        kv("optim.beta2", format!("{:?}", o.beta2));
        kv("optim.adam_epsilon", format!("{:?}", o.adam_epsilon));
        kv("optim.epsilon_scaling", enum_name(&o.epsilon_scaling));
        let names: Vec<&str> = self.methods.iter().map(|m| m.as_str()).collect();
        kv("run.methods", names.join(","));
        kv("run.iters", self.iters.to_string());
        kv("run.eval_every", self.eval_every.to_string());
        kv("run.batch_size", self.batch_size.to_string());
        kv("run.udim_batch_size", self.udim_batch_size.to_string());
        kv("run.seeds", join(&self.seeds));
        kv("run.train_frac", format!("{:?}", self.train_frac));
        kv("run.val_frac", format!("{:?}", self.val_frac));
        let a = &self.analysis;
        kv("analysis.samples", a.samples.to_string());
        kv("analysis.param_grid_radius", format!("{:?}", a.param_grid_radius));
        kv("analysis.data_grid_radius", format!("{:?}", a.data_grid_radius));
        kv("analysis.grid_resolution", a.grid_resolution.to_string());
        s
    }

    /// SHA-256 of [`to_text`](Self::to_text), hex encoded. The output
    /// directory is not part of the text, so it does not affect the hash.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    /// Hash of the benchmark keys alone, used to check that manifests are comparable.
    pub fn benchmark_hash(&self) -> String {
        let text: String = self
            .to_text()
            .lines()
            .filter(|l| l.starts_with("benchmark."))
            .map(|l| format!("{l}\n"))
            .collect();
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
