use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use udim_cli::{emit_analysis, emit_comparison, run_experiment, selftest, AnalysisKind, CliError, CliResult, ExperimentConfig, Manifest};
use udim_core::domains::save_dataset;

#[derive(Parser)]
#[command(name = "udim", version, about = "Desk-scale UDIM experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (flat key = value file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides run.out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replace run.seeds with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for independent runs (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Write the benchmark domains as dataset files.
    Gen,
    /// Train every method and seed of the config.
    Train,
    /// Build a mean/std comparison table from finished experiments.
    Compare {
        /// Experiment directories to combine (defaults to --out).
        dirs: Vec<PathBuf>,
    },
    /// Inconsistency curves and sharpness grids for a finished experiment.
    Analyze {
        /// Comma-separated subset of inconsistency_curve, param_grid, data_grid.
        #[arg(long, default_value = "inconsistency_curve,param_grid,data_grid")]
        which: String,
    },
    /// Run the quick invariant suite.
    Selftest,
}

/// Prints a line, ignoring a closed stdout (e.g. piped into `head`).
fn say(line: impl std::fmt::Display) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> CliResult<PathBuf> {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out.clone()))
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set run.out".into()))
}

fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Gen => {
            let cfg = load_config(cli)?;
            let out = out_dir(cli, Some(&cfg))?;
            let data = out.join("data");
            fs::create_dir_all(&data)?;
            fs::write(out.join(udim_cli::experiment::CONFIG_FILE), cfg.to_text())?;
            for d in cfg.benchmark.build()? {
                let path = data.join(format!("{}.udimds", d.domain_id()));
                save_dataset(&d, &path)?;
                say(path.display());
            }
        }
        Command::Train => {
            let cfg = load_config(cli)?;
            let out = out_dir(cli, Some(&cfg))?;
            let manifest = run_experiment(&cfg, &out, cli.threads)?;
            say(format!("{} runs written to {}", manifest.runs.len(), out.display()));
        }
        Command::Compare { dirs } => {
            let out = out_dir(cli, None)?;
            let dirs: Vec<&Path> = if dirs.is_empty() { vec![out.as_path()] } else { dirs.iter().map(PathBuf::as_path).collect() };
            let manifests = dirs.iter().map(|d| Manifest::load(d)).collect::<CliResult<Vec<_>>>()?;
            let table = emit_comparison(&manifests)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("comparison.csv"), &table)?;
            say(table.trim_end());
        }
        Command::Analyze { which } => {
            let out = out_dir(cli, None)?;
            let kinds = which.split(',').map(|s| s.trim().parse()).collect::<CliResult<Vec<AnalysisKind>>>()?;
            for path in emit_analysis(&out, &kinds)? {
                say(path.display());
            }
        }
        Command::Selftest => {
            let checks = selftest::run();
            for c in &checks {
                say(format!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
            }
            if checks.iter().any(|c| !c.passed) {
                return Err(CliError::Runtime("selftest failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("udim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
