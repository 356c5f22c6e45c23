//! Comparison tables and analysis artifacts built from finished experiments.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use udim_core::analysis::{data_sharpness_grid, estimate_inconsistency, param_sharpness_grid};
use udim_core::train::Checkpoint;
use udim_core::{DomainDataset, Mlp};

use crate::config::MethodName;
use crate::error::{CliError, CliResult};
use crate::experiment::{load_checkpoints, load_config, load_model, prepare, Manifest};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; 0 for a single value.
fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Rows are methods in first-seen config order, columns are target domains
/// followed by `avg`, each as a `_mean`/`_std` pair over seeds. The avg mean
/// is the row mean of the domain means; its std is taken over per-seed averages.
pub fn emit_comparison(manifests: &[Manifest]) -> CliResult<String> {
    let first = manifests
        .first()
        .ok_or_else(|| CliError::Config("no manifests to compare".into()))?;
    for m in manifests {
        if m.benchmark_hash != first.benchmark_hash || m.targets != first.targets {
            return Err(CliError::Config("manifests come from different benchmarks".into()));
        }
    }
    let mut methods: Vec<MethodName> = Vec::new();
    for m in manifests {
        for &name in &m.methods {
            if !methods.contains(&name) {
                methods.push(name);
            }
        }
    }
    let targets = &first.targets;
    let mut out = String::from("method,seeds");
    for t in targets.iter().map(String::as_str).chain(["avg"]) {
        let _ = write!(out, ",{t}_mean,{t}_std");
    }
    out.push('\n');
    for name in methods {
        let runs: Vec<_> = manifests.iter().flat_map(|m| &m.runs).filter(|r| r.method == name).collect();
        if runs.is_empty() {
            continue;
        }
        let _ = write!(out, "{},{}", name.as_str(), runs.len());
        let mut domain_means = Vec::new();
        for t in targets {
            let accs: Vec<f64> = runs
                .iter()
                .map(|r| {
                    r.target_accuracy
                        .get(t)
                        .copied()
                        .ok_or_else(|| CliError::Runtime(format!("run {} lacks target {t}", r.dir)))
                })
                .collect::<CliResult<_>>()?;
            let m = mean(&accs);
            domain_means.push(m);
            let _ = write!(out, ",{m:?},{:?}", std_dev(&accs));
        }
        let per_run: Vec<f64> = runs
            .iter()
            .map(|r| mean(&targets.iter().map(|t| r.target_accuracy[t]).collect::<Vec<_>>()))
            .collect();
        let _ = writeln!(out, ",{:?},{:?}", mean(&domain_means), std_dev(&per_run));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalysisKind {
    InconsistencyCurve,
    ParamGrid,
    DataGrid,
}

impl AnalysisKind {
    pub const ALL: [AnalysisKind; 3] = [
        AnalysisKind::InconsistencyCurve,
        AnalysisKind::ParamGrid,
        AnalysisKind::DataGrid,
    ];
}

impl std::str::FromStr for AnalysisKind {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "inconsistency_curve" => Ok(AnalysisKind::InconsistencyCurve),
            "param_grid" => Ok(AnalysisKind::ParamGrid),
            "data_grid" => Ok(AnalysisKind::DataGrid),
            _ => Err(CliError::Config(format!("unknown analysis {s:?}"))),
        }
    }
}

/// Estimated inconsistency of every checkpoint against each target; one row
/// per checkpoint with a column per target and their maximum.
#[allow(clippy::too_many_arguments)]
pub fn inconsistency_curve(
    model: &Mlp,
    checkpoints: &[Checkpoint],
    source: &DomainDataset,
    targets: &[DomainDataset],
    gamma: f64,
    rho: f64,
    samples: usize,
    seed: u64,
) -> CliResult<String> {
    let mut out = String::from("iter");
    for t in targets {
        let _ = write!(out, ",{}", t.domain_id());
    }
    out.push_str(",max\n");
    let mut m = model.clone();
    for cp in checkpoints {
        m.set_params(&cp.params)?;
        let _ = write!(out, "{}", cp.iter);
        let mut worst: f64 = 0.0;
        for t in targets {
            let v = estimate_inconsistency(&mut m, source, t, gamma, rho, samples, seed)?.value;
            worst = worst.max(v);
            let _ = write!(out, ",{v:?}");
        }
        let _ = writeln!(out, ",{worst:?}");
    }
    Ok(out)
}

/// Writes the requested analyses for every run of the experiment in `dir`
/// and returns the written paths.
pub fn emit_analysis(dir: &Path, which: &[AnalysisKind]) -> CliResult<Vec<PathBuf>> {
    let manifest = Manifest::load(dir)?;
    if !manifest.complete {
        return Err(CliError::Runtime("the experiment is incomplete; rerun train first".into()));
    }
    let cfg = load_config(dir, &manifest)?;
    let prepared = prepare(&cfg)?;
    let mut written = Vec::new();
    for run in &manifest.runs {
        let model = load_model(dir, run)?;
        let run_dir = dir.join(&run.dir);
        let mut put = |name: String, text: String| -> CliResult<()> {
            let path = run_dir.join(name);
            fs::write(&path, text)?;
            written.push(path);
            Ok(())
        };
        for kind in AnalysisKind::ALL.into_iter().filter(|k| which.contains(k)) {
            match kind {
                AnalysisKind::InconsistencyCurve => {
                    let cps = load_checkpoints(&cfg, dir, run)?;
                    let csv = inconsistency_curve(
                        &model,
                        &cps,
                        &prepared.source_train,
                        &prepared.targets,
                        cfg.udim.gamma,
                        cfg.udim.rho,
                        cfg.analysis.samples,
                        run.seed,
                    )?;
                    put("inconsistency_curve.csv".into(), csv)?;
                }
                AnalysisKind::ParamGrid => {
                    let mut m = model.clone();
                    let g = param_sharpness_grid(
                        &mut m,
                        &prepared.source_train,
                        cfg.analysis.param_grid_radius,
                        cfg.analysis.grid_resolution,
                        run.seed,
                    )?;
                    put("param_grid.csv".into(), g.to_csv())?;
                }
                AnalysisKind::DataGrid => {
                    for t in &prepared.targets {
                        let g = data_sharpness_grid(
                            &model,
                            t,
                            cfg.analysis.data_grid_radius,
                            cfg.analysis.grid_resolution,
                            run.seed,
                        )?;
                        put(format!("data_grid_{}.csv", t.domain_id()), g.to_csv())?;
                    }
                }
            }
        }
    }
    Ok(written)
}
