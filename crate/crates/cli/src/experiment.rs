//! Runs every (method, seed) pair of a config and records the artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use udim_core::domains::{split, DomainDataset};
use udim_core::train::{train, Checkpoint, TrainSpec};
use udim_core::Mlp;

use crate::config::{ExperimentConfig, MethodName};
use crate::error::{CliError, CliResult};

pub const CONFIG_FILE: &str = "config.resolved";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SOURCE_VAL_ID: &str = "source_val";
pub const SOURCE_TEST_ID: &str = "source_test";

/// Source splits and target domains of a benchmark.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub domains: Vec<DomainDataset>,
    /// Training pool: the train part of every source domain.
    pub source_train: DomainDataset,
    pub source_val: DomainDataset,
    pub source_test: DomainDataset,
    pub targets: Vec<DomainDataset>,
}

impl Prepared {
    pub fn target_ids(&self) -> Vec<String> {
        self.targets.iter().map(|d| d.domain_id().to_string()).collect()
    }
}

/// Builds the benchmark and splits each source domain with a seed derived
/// from the benchmark seed, so every run sees the same splits.
pub fn prepare(cfg: &ExperimentConfig) -> CliResult<Prepared> {
    let domains = cfg.benchmark.build()?;
    let mut train_parts = Vec::new();
    let mut val_parts = Vec::new();
    let mut test_parts = Vec::new();
    for &s in &cfg.benchmark.sources {
        let (tr, va, te) = split(
            &domains[s],
            cfg.train_frac,
            cfg.val_frac,
            cfg.benchmark.seed.wrapping_add(s as u64),
        )?;
        train_parts.push(tr);
        val_parts.push(va);
        test_parts.push(te);
    }
    let concat = |id: &str, parts: &[DomainDataset]| {
        let refs: Vec<&DomainDataset> = parts.iter().collect();
        DomainDataset::concat(id, &refs)
    };
    let targets = cfg.benchmark.targets().into_iter().map(|t| domains[t].clone()).collect();
    Ok(Prepared {
        source_train: concat("source_train", &train_parts)?,
        source_val: concat(SOURCE_VAL_ID, &val_parts)?,
        source_test: concat(SOURCE_TEST_ID, &test_parts)?,
        targets,
        domains,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: MethodName,
    pub seed: u64,
    /// Run directory, relative to the experiment directory.
    pub dir: String,
    /// Every file the run wrote, relative to the experiment directory.
    pub files: Vec<String>,
    /// Checkpoint with the best source-validation accuracy (earliest on ties).
    pub selected_iter: usize,
    pub source_val_accuracy: f64,
    pub source_test_accuracy: f64,
    /// Target accuracies of the selected checkpoint.
    pub target_accuracy: BTreeMap<String, f64>,
    /// Target accuracies at the last iteration.
    pub final_target_accuracy: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub method: MethodName,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub benchmark_hash: String,
    /// False when any run failed; the failed runs are listed in `failures`.
    pub complete: bool,
    pub config_file: String,
    pub methods: Vec<MethodName>,
    pub seeds: Vec<u64>,
    pub targets: Vec<String>,
    pub runs: Vec<RunRecord>,
    pub failures: Vec<Failure>,
}

impl Manifest {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Every artifact path the manifest references, relative to its directory.
    pub fn files(&self) -> Vec<String> {
        let mut out = vec![self.config_file.clone()];
        for r in &self.runs {
            out.extend(r.files.iter().cloned());
        }
        out
    }

    pub fn run(&self, method: MethodName, seed: u64) -> Option<&RunRecord> {
        self.runs.iter().find(|r| r.method == method && r.seed == seed)
    }
}

pub fn run_dir_name(method: MethodName, seed: u64) -> String {
    format!("runs/{}_s{seed}", method.as_str())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn train_spec(cfg: &ExperimentConfig, prepared: &Prepared, method: MethodName, seed: u64) -> TrainSpec {
    let d = &prepared.source_train;
    TrainSpec {
        layer_dims: cfg.layer_dims(d.input_dim(), d.num_classes()),
        activation: cfg.model.activation,
        loss_kind: cfg.model.loss,
        iters: cfg.iters,
        batch_size: cfg.batch_size,
        udim_batch_size: method.is_udim().then_some(cfg.udim_batch_size),
        eval_every: cfg.eval_every,
        seed,
    }
}

fn run_one(cfg: &ExperimentConfig, prepared: &Prepared, out: &Path, method: MethodName, seed: u64) -> CliResult<RunRecord> {
    let (kind, warmup) = method.method();
    let ucfg = udim_core::udim::UdimConfig {
        base_sharpness: warmup,
        ..cfg.udim.clone()
    };
    let spec = train_spec(cfg, prepared, method, seed);
    let mut evals = vec![prepared.source_val.clone()];
    evals.extend(prepared.targets.iter().cloned());
    let outcome = train(&spec, kind, std::slice::from_ref(&prepared.source_train), &evals, &ucfg, &cfg.optim)?;

    let curve = outcome.log.accuracy_curve(SOURCE_VAL_ID);
    let (selected_iter, source_val_accuracy) = curve
        .iter()
        .copied()
        .fold(None, |best: Option<(usize, f64)>, (it, acc)| match best {
            Some((_, b)) if b >= acc => best,
            _ => Some((it, acc)),
        })
        .ok_or_else(|| CliError::Runtime("no evaluation was recorded".into()))?;
    let checkpoint = outcome
        .checkpoints
        .iter()
        .find(|c| c.iter == selected_iter)
        .ok_or_else(|| CliError::Runtime(format!("no checkpoint at iteration {selected_iter}")))?;
    let mut selected = outcome.model.clone();
    selected.set_params(&checkpoint.params)?;

    let accuracies = |m: &Mlp| -> CliResult<BTreeMap<String, f64>> {
        prepared
            .targets
            .iter()
            .map(|t| Ok((t.domain_id().to_string(), m.accuracy(t)?)))
            .collect()
    };
    let dir = run_dir_name(method, seed);
    let abs = out.join(&dir);
    fs::create_dir_all(&abs)?;
    let mut files = Vec::new();
    let mut put = |name: &str, write: &dyn Fn(&Path) -> CliResult<()>| -> CliResult<()> {
        write(&abs.join(name))?;
        files.push(format!("{dir}/{name}"));
        Ok(())
    };
    put("metrics.csv", &|p| Ok(fs::write(p, outcome.log.to_csv())?))?;
    put("model.json", &|p| write_json(p, &outcome.model))?;
    put("selected_model.json", &|p| write_json(p, &selected))?;
    put("checkpoints.json", &|p| write_json(p, &outcome.checkpoints))?;

    Ok(RunRecord {
        method,
        seed,
        dir,
        files,
        selected_iter,
        source_val_accuracy,
        source_test_accuracy: selected.accuracy(&prepared.source_test)?,
        target_accuracy: accuracies(&selected)?,
        final_target_accuracy: accuracies(&outcome.model)?,
    })
}

/// Trains every (method, seed) pair on up to `threads` workers (0 picks the
/// rayon default) and writes `manifest.json`. Results do not depend on the
/// thread count. When a run fails the manifest is still written, marked
/// incomplete, and an error is returned.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, threads: usize) -> CliResult<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_text())?;
    let prepared = prepare(cfg)?;

    let jobs: Vec<(MethodName, u64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let results: Vec<CliResult<RunRecord>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(m, s)| run_one(cfg, &prepared, out, m, s))
            .collect()
    });

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for ((method, seed), r) in jobs.into_iter().zip(results) {
        match r {
            Ok(rec) => runs.push(rec),
            Err(e) => failures.push(Failure {
                method,
                seed,
                error: e.to_string(),
            }),
        }
    }
    let manifest = Manifest {
        config_hash: cfg.hash(),
        benchmark_hash: cfg.benchmark_hash(),
        complete: failures.is_empty(),
        config_file: CONFIG_FILE.to_string(),
        methods: cfg.methods.clone(),
        seeds: cfg.seeds.clone(),
        targets: prepared.target_ids(),
        runs,
        failures,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    if let Some(f) = manifest.failures.first() {
        return Err(CliError::Runtime(format!(
            "{} run(s) failed; first: {} seed {}: {}",
            manifest.failures.len(),
            f.method.as_str(),
            f.seed,
            f.error
        )));
    }
    Ok(manifest)
}

/// Loads the checkpoints of a run and checks that every scheduled one is present.
pub fn load_checkpoints(cfg: &ExperimentConfig, out: &Path, run: &RunRecord) -> CliResult<Vec<Checkpoint>> {
    let path = out.join(&run.dir).join("checkpoints.json");
    let text = fs::read_to_string(&path).map_err(|e| {
        CliError::Runtime(format!("run {}: cannot read {}: {e}", run.dir, path.display()))
    })?;
    let cps: Vec<Checkpoint> = serde_json::from_str(&text)?;
    let mut want: Vec<usize> = (1..=cfg.iters / cfg.eval_every).map(|k| k * cfg.eval_every).collect();
    if cfg.iters % cfg.eval_every != 0 {
        want.push(cfg.iters);
    }
    for (k, it) in want.iter().enumerate() {
        if cps.get(k).map(|c| c.iter) != Some(*it) {
            return Err(CliError::Runtime(format!(
                "run {}: checkpoint for iteration {it} is missing",
                run.dir
            )));
        }
    }
    if cps.len() != want.len() {
        return Err(CliError::Runtime(format!(
            "run {}: {} checkpoints on disk, {} scheduled",
            run.dir,
            cps.len(),
            want.len()
        )));
    }
    Ok(cps)
}

pub fn load_model(out: &Path, run: &RunRecord) -> CliResult<Mlp> {
    let path = out.join(&run.dir).join("model.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Runtime(format!("run {}: cannot read {}: {e}", run.dir, path.display())))?;
    let raw: Mlp = serde_json::from_str(&text)?;
    // Rebuild through the validating constructor.
    Ok(Mlp::from_parts(
        raw.dims().to_vec(),
        raw.activations().to_vec(),
        raw.loss_kind(),
        raw.params().to_vec(),
    )?)
}

/// Reads the resolved config of an experiment directory and checks it against the manifest.
pub fn load_config(out: &Path, manifest: &Manifest) -> CliResult<ExperimentConfig> {
    let path = out.join(&manifest.config_file);
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let cfg = ExperimentConfig::parse(&text)?;
    if cfg.hash() != manifest.config_hash {
        return Err(CliError::Runtime(format!(
            "{} does not match the manifest's config hash",
            path.display()
        )));
    }
    Ok(cfg)
}
