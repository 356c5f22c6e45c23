//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! with its observed numbers; the test fails if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use udim_cli::{emit_analysis, run_experiment, AnalysisKind, ExperimentConfig};
use udim_core::analysis::{data_sharpness_grid, estimate_inconsistency, param_sharpness_grid, LandscapeGrid};
use udim_core::domains::{decode_dataset, encode_dataset, BenchmarkSpec, DomainDataset, Generator, Scenario};
use udim_core::nn::{per_sample_classifier_grads, Activation};
use udim_core::objective::Quadratic;
use udim_core::optim::{sam_epsilon, BaseOptimizer, EpsilonScaling, OptimizerConfig, Sharpness};
use udim_core::rng;
use udim_core::train::{train, Method, TrainSpec};
use udim_core::udim::{perturb_batch, udim_gradient, UdimConfig};
use udim_core::{LossKind, Mlp, Scope, Tensor};

const GRAD_CASES: u64 = 100;
const GRAD_REL: f64 = 1e-5;
const GRAD_FLOOR: f64 = 1e-3;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const SAM_QUADRATICS: u64 = 50;
const SAM_DIRECTIONS: usize = 3600;
const SAM_RATIO: f64 = 0.999;
const MEAN_TOL: f64 = 1e-10;
const ASCENT_TRIALS: u64 = 1000;
const ASCENT_MIN: usize = 950;
const OBJ_CONFIGS: u64 = 20;
const OBJ_REL: f64 = 1e-2;
const BENCH_SEEDS: u64 = 5;
const BENCH_BUDGET: Duration = Duration::from_secs(600);
const INC_MIN_WINS: usize = 4;
const SIGN_P_MAX: f64 = 0.1;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn batch(r: &mut rng::Rng, n: usize, d: usize, c: usize) -> DomainDataset {
    let x = rng::normal_vec(r, n * d);
    let y = (0..n).map(|_| r.random_range(0..c)).collect();
    DomainDataset::new("b", Tensor::matrix(n, d, x).unwrap(), y, c).unwrap()
}

fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let (mut worst_p, mut worst_x) = (0.0f64, 0.0f64);
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(GRAD_FLOOR);
    for seed in 0..GRAD_CASES {
        let mut r = rng::stream(seed, 1001);
        let (d, h, c) = (r.random_range(1..5), r.random_range(2..7), r.random_range(2..4));
        let act = [Activation::Tanh, Activation::Relu, Activation::Identity][r.random_range(0..3)];
        let loss = if seed % 2 == 0 { LossKind::CrossEntropy } else { LossKind::MeanSquaredError };
        let m = Mlp::with_activation(&[d, h, h, c], act, loss, seed).unwrap();
        let n = r.random_range(1..7);
        let b = batch(&mut r, n, d, c);
        let g = m.loss_and_grad(&b).unwrap().1;
        for k in 0..m.num_params() {
            let fd = central(
                |t| {
                    let mut p = m.clone();
                    p.params_mut()[k] = t;
                    p.loss(&b).unwrap()
                },
                m.params()[k],
                1e-5,
            );
            worst_p = worst_p.max(rel(g[k], fd));
        }
        let x = b.input(0).to_vec();
        let y = b.labels()[0];
        let gx = m.grad_input(&Tensor::vector(x.clone()).unwrap(), y).unwrap();
        for k in 0..d {
            let fd = central(
                |t| {
                    let mut xs = x.clone();
                    xs[k] = t;
                    let one = DomainDataset::new("o", Tensor::matrix(1, d, xs).unwrap(), vec![y], c).unwrap();
                    m.loss(&one).unwrap()
                },
                x[k],
                1e-5,
            );
            worst_x = worst_x.max(rel(gx.data()[k], fd));
        }
    }
    let took = start.elapsed();
    outcome(
        worst_p <= GRAD_REL && worst_x <= GRAD_REL && took < GRAD_BUDGET,
        format!("{GRAD_CASES} cases, worst rel err param {worst_p:.2e} input {worst_x:.2e} (tol {GRAD_REL:e}), {:.1}s", took.as_secs_f64()),
    )
}

fn sam_closed_form() -> Outcome {
    // The default SAM radius; the closed form is first order, so its gap grows with rho.
    let rho = 0.05;
    let mut worst = f64::INFINITY;
    for seed in 0..SAM_QUADRATICS {
        let mut r = rng::stream(seed, 1002);
        let t: f64 = r.random_range(0.0..std::f64::consts::PI);
        let (l1, l2) = (r.random_range(0.1..5.0), r.random_range(0.1..20.0));
        let (c, s) = (t.cos(), t.sin());
        let a = vec![l1 * c * c + l2 * s * s, (l1 - l2) * c * s, (l1 - l2) * c * s, l1 * s * s + l2 * c * c];
        let theta = [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)];
        let q = Quadratic::new(a, vec![0.0, 0.0], theta.to_vec());
        let at = |e: &[f64]| q.loss_at(&[theta[0] + e[0], theta[1] + e[1]]);
        let eps = sam_epsilon(&q.grad_at(&theta), rho, EpsilonScaling::UnitNorm).unwrap().epsilon;
        let best = (0..SAM_DIRECTIONS)
            .map(|k| {
                let w = 2.0 * std::f64::consts::PI * k as f64 / SAM_DIRECTIONS as f64;
                at(&[rho * w.cos(), rho * w.sin()])
            })
            .fold(f64::NEG_INFINITY, f64::max);
        worst = worst.min(at(&eps) / best);
    }
    outcome(worst >= SAM_RATIO, format!("{SAM_QUADRATICS} quadratics, worst ratio to sweep max {worst:.6} (min {SAM_RATIO}, rho {rho})"))
}

fn variance() -> Outcome {
    let mut exact = true;
    let mut worst_mean = 0.0f64;
    for seed in 0..50 {
        let mut r = rng::stream(seed, 1003);
        let (d, c) = (r.random_range(1..5), r.random_range(2..5));
        let loss = if seed % 2 == 0 { LossKind::CrossEntropy } else { LossKind::MeanSquaredError };
        let m = Mlp::new(&[d, 5, c], loss, seed).unwrap();
        let n = r.random_range(2..12);
        let b = batch(&mut r, n, d, c);
        let set = per_sample_classifier_grads(&m, &b).unwrap();
        let n = set.len() as f64;
        let p = set.samples()[0].len();
        let two_pass: Vec<f64> = (0..p)
            .map(|k| {
                let mut mean = 0.0;
                for s in set.samples() {
                    mean += s.values()[k];
                }
                mean /= n;
                let mut ss = 0.0;
                for s in set.samples() {
                    ss += (s.values()[k] - mean) * (s.values()[k] - mean);
                }
                ss / (n - 1.0)
            })
            .collect();
        exact &= set.variance().unwrap().values() == &two_pass[..];
        let batch_grad = m.grad_params(&b, Scope::Classifier).unwrap();
        for k in 0..p {
            let mean: f64 = set.samples().iter().map(|s| s.values()[k]).sum::<f64>() / n;
            worst_mean = worst_mean.max((mean - batch_grad.values()[k]).abs());
        }
    }
    outcome(
        exact && worst_mean <= MEAN_TOL,
        format!("two-pass equality {exact}, worst |mean - batch grad| {worst_mean:.2e} (tol {MEAN_TOL:e})"),
    )
}

fn ascent() -> Outcome {
    let cfg = UdimConfig { rho_x: 1e-3, ..UdimConfig::default() };
    let objective = |m: &Mlp, x: &[f64], y: usize, c: usize| {
        let one = DomainDataset::new("o", Tensor::matrix(1, x.len(), x.to_vec()).unwrap(), vec![y], c).unwrap();
        let (l, g) = m.loss_and_grad(&one).unwrap();
        l + cfg.rho_prime * norm(&g)
    };
    let mut up = 0;
    for trial in 0..ASCENT_TRIALS {
        let mut r = rng::stream(trial, 1004);
        let (d, c) = (r.random_range(2..6), r.random_range(2..4));
        let mut m = Mlp::new(&[d, r.random_range(3..9), c], LossKind::CrossEntropy, trial).unwrap();
        let b = batch(&mut r, 1, d, c);
        let moved = perturb_batch(&mut m, &b, &cfg).unwrap().perturbed;
        let y = b.labels()[0];
        if objective(&m, moved.input(0), y, c) >= objective(&m, b.input(0), y, c) {
            up += 1;
        }
    }
    outcome(up >= ASCENT_MIN, format!("nondecreasing in {up}/{ASCENT_TRIALS} (min {ASCENT_MIN})"))
}

/// Two-pass unbiased variance of per-sample classifier gradients.
fn var_of(m: &Mlp, d: &DomainDataset) -> Vec<f64> {
    let set = per_sample_classifier_grads(m, d).unwrap();
    let n = set.len() as f64;
    (0..set.samples()[0].len())
        .map(|k| {
            let mean = set.samples().iter().map(|s| s.values()[k]).sum::<f64>() / n;
            set.samples().iter().map(|s| (s.values()[k] - mean).powi(2)).sum::<f64>() / (n - 1.0)
        })
        .collect()
}

fn full_objective() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..OBJ_CONFIGS {
        let mut r = rng::stream(seed, 1005);
        let h = r.random_range(3..7);
        let mut m = Mlp::with_activation(&[2, h, 2], Activation::Tanh, LossKind::CrossEntropy, seed).unwrap();
        let n = r.random_range(4..10);
        let b = batch(&mut r, n, 2, 2);
        let cfg = UdimConfig {
            rho_prime: r.random_range(0.01..0.2),
            lambda1: r.random_range(0.5..2.0),
            rho_x: r.random_range(0.1..1.0),
            fd_delta: 1e-5,
            ..UdimConfig::default()
        };
        let opt = cfg.optimizer_config(&OptimizerConfig::default());
        let dt = perturb_batch(&mut m, &b, &cfg).unwrap().perturbed;
        let got = udim_gradient(&mut m, &b, &dt, &cfg, &opt).unwrap().total;
        let g0 = m.loss_and_grad(&b).unwrap().1;
        let eps = sam_epsilon(&g0, cfg.rho, EpsilonScaling::UnitNorm).unwrap().epsilon;
        let scalar = |p: &Mlp| {
            let mut ascended = p.clone();
            for (w, e) in ascended.params_mut().iter_mut().zip(&eps) {
                *w += e;
            }
            let gap: Vec<f64> = var_of(p, &dt).iter().zip(var_of(p, &b)).map(|(x, y)| x - y).collect();
            ascended.loss(&b).unwrap()
                + cfg.lambda1 * (cfg.rho_prime * norm(&p.loss_and_grad(&dt).unwrap().1) + norm(&gap))
        };
        let fd: Vec<f64> = (0..m.num_params())
            .map(|k| {
                central(
                    |t| {
                        let mut p = m.clone();
                        p.params_mut()[k] = t;
                        scalar(&p)
                    },
                    m.params()[k],
                    1e-5,
                )
            })
            .collect();
        let diff: Vec<f64> = got.iter().zip(&fd).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / norm(&fd));
    }
    outcome(worst <= OBJ_REL, format!("{OBJ_CONFIGS} configs, worst rel err {worst:.2e} (tol {OBJ_REL:e})"))
}

fn reduction() -> Outcome {
    let doms = BenchmarkSpec::rotated_moons_sdg(100, 11).build().unwrap();
    let spec = TrainSpec {
        layer_dims: vec![2, 8, 8, 2],
        activation: Activation::Tanh,
        loss_kind: LossKind::CrossEntropy,
        iters: 200,
        batch_size: 16,
        udim_batch_size: None,
        eval_every: 20,
        seed: 11,
    };
    let cfg = UdimConfig { lambda1: 0.0, rho_x: 0.0, ..UdimConfig::default() };
    let opt = OptimizerConfig::default();
    let sam = train(&spec, Method::Base(Sharpness::Sam), &doms[..1], &doms[1..], &cfg, &opt).unwrap();
    let udim = train(&spec, Method::Udim, &doms[..1], &doms[1..], &cfg, &opt).unwrap();
    let losses = |o: &udim_core::train::TrainOutcome| o.log.iters.iter().map(|r| r.sam_loss.to_bits()).collect::<Vec<_>>();
    let same = sam.checkpoints == udim.checkpoints && losses(&sam) == losses(&udim) && sam.log.evals == udim.log.evals;
    outcome(same, format!("{} iterations, {} checkpoints bitwise equal: {same}", spec.iters, sam.checkpoints.len()))
}

struct SeedResult {
    inconsistency: [f64; 2],
    worst_acc: [f64; 2],
    grid_sharpness: [f64; 2],
}

/// SAM-only vs UDIM-w/-SAM on rotated moons, one seed, end-of-training models.
fn benchmark_seed(seed: u64) -> SeedResult {
    let doms = BenchmarkSpec::rotated_moons_sdg(500, seed).build().unwrap();
    let spec = TrainSpec {
        layer_dims: vec![2, 16, 16, 2],
        activation: Activation::Tanh,
        loss_kind: LossKind::CrossEntropy,
        iters: 2000,
        batch_size: 32,
        udim_batch_size: Some(16),
        eval_every: 2000,
        seed,
    };
    let cfg = UdimConfig { rho_x: 0.75, ..UdimConfig::default() };
    let opt = OptimizerConfig { learning_rate: 0.05, base: BaseOptimizer::Sgd, ..OptimizerConfig::default() };
    let (source, targets) = (&doms[0], &doms[1..]);
    let mut out = SeedResult { inconsistency: [0.0; 2], worst_acc: [1.0; 2], grid_sharpness: [0.0; 2] };
    for (k, method) in [Method::Base(Sharpness::Sam), Method::Udim].into_iter().enumerate() {
        let mut m = train(&spec, method, &doms[..1], &[], &cfg, &opt).unwrap().model;
        for t in targets {
            let e = estimate_inconsistency(&mut m, source, t, 0.1, 0.05, 64, seed).unwrap();
            out.inconsistency[k] = out.inconsistency[k].max(e.value);
            out.worst_acc[k] = out.worst_acc[k].min(m.accuracy(t).unwrap());
        }
        out.grid_sharpness[k] = data_sharpness_grid(&m, targets.last().unwrap(), 0.5, 11, seed).unwrap().sharpness();
    }
    out
}

/// One-sided sign test: probability of at least `wins` successes in `n` fair trials.
fn sign_test_p(wins: usize, n: usize) -> f64 {
    let choose = |n: usize, k: usize| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    (wins..=n).map(|k| choose(n, k)).sum::<f64>() / 2f64.powi(n as i32)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn benchmark() -> [Outcome; 3] {
    let start = Instant::now();
    let results: Vec<SeedResult> = (0..BENCH_SEEDS).into_par_iter().map(benchmark_seed).collect();
    let took = start.elapsed();
    let n = results.len();

    let inc_wins = results.iter().filter(|r| r.inconsistency[1] <= r.inconsistency[0]).count();
    let mean_inc = |k: usize| results.iter().map(|r| r.inconsistency[k]).sum::<f64>() / n as f64;
    let c7 = outcome(
        inc_wins >= INC_MIN_WINS && took < BENCH_BUDGET,
        format!(
            "UDIM <= SAM on {inc_wins}/{n} seeds (min {INC_MIN_WINS}); mean max-target inconsistency SAM {:.4} UDIM {:.4}; benchmark {:.0}s",
            mean_inc(0),
            mean_inc(1),
            took.as_secs_f64()
        ),
    );

    let mean_acc = |k: usize| results.iter().map(|r| r.worst_acc[k]).sum::<f64>() / n as f64;
    let wins = results.iter().filter(|r| r.worst_acc[1] > r.worst_acc[0]).count();
    let ties = results.iter().filter(|r| r.worst_acc[1] == r.worst_acc[0]).count();
    let p = sign_test_p(wins, n - ties);
    let c8 = outcome(
        mean_acc(1) > mean_acc(0) && p <= SIGN_P_MAX,
        format!(
            "mean worst-target acc SAM {:.4} UDIM {:.4} (margin {:+.4}); wins {wins}/{}, sign test p {p:.4} (max {SIGN_P_MAX})",
            mean_acc(0),
            mean_acc(1),
            mean_acc(1) - mean_acc(0),
            n - ties
        ),
    );

    let med = |k: usize| median(results.iter().map(|r| r.grid_sharpness[k]).collect());
    let c9 = outcome(
        med(1) < med(0),
        format!("median data-grid max-minus-center at radius 0.5 on rot60: SAM {:.4} UDIM {:.4}", med(0), med(1)),
    );
    [c7, c8, c9]
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn bits(d: &DomainDataset) -> Vec<u64> {
    d.inputs().data().iter().map(|v| v.to_bits()).collect()
}

fn determinism() -> Outcome {
    let generators = [
        BenchmarkSpec::rotated_moons_sdg(60, 3),
        BenchmarkSpec {
            generator: Generator::Blobs { num_classes: 3, shifts: vec![vec![0.0, 0.0], vec![1.5, -0.5], vec![-1.0, 2.0]], scales: vec![1.0, 1.3, 0.8] },
            n_per_domain: 40,
            seed: 4,
            scenario: Scenario::Loodg,
            sources: vec![0, 1],
        },
        BenchmarkSpec {
            generator: Generator::Glyphs { corruption: udim_core::domains::Corruption::ALL[0], severities: vec![0, 3, 5] },
            n_per_domain: 20,
            seed: 5,
            scenario: Scenario::Sdg,
            sources: vec![0],
        },
    ];
    let mut datasets = 0;
    let mut data_ok = true;
    for spec in &generators {
        for d in spec.build().unwrap() {
            let back = decode_dataset(&encode_dataset(&d).unwrap()).unwrap();
            data_ok &= back == d && bits(&back) == bits(&d);
            datasets += 1;
        }
    }

    let doms = BenchmarkSpec::rotated_moons_sdg(60, 6).build().unwrap();
    let mut m = Mlp::new(&[2, 6, 2], LossKind::CrossEntropy, 6).unwrap();
    let grids = [
        param_sharpness_grid(&mut m, &doms[0], 0.5, 7, 6).unwrap(),
        data_sharpness_grid(&m, &doms[4], 0.5, 7, 6).unwrap(),
    ];
    let grid_ok = grids.iter().all(|g| {
        let back = LandscapeGrid::from_csv(&g.to_csv()).unwrap();
        back.to_csv() == g.to_csv() && back.values.iter().map(|v| v.to_bits()).eq(g.values.iter().map(|v| v.to_bits()))
    });

    let cfg = ExperimentConfig::parse(
        "benchmark.n_per_domain = 40\nrun.iters = 30\nrun.eval_every = 10\nrun.batch_size = 8\nrun.seeds = 0,1\n\
         run.methods = sam,udim_sam\nanalysis.samples = 6\nanalysis.grid_resolution = 5\n",
    )
    .unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (dir, threads) in [(a.path(), 1), (b.path(), 3)] {
        run_experiment(&cfg, dir, threads).unwrap();
        emit_analysis(dir, &AnalysisKind::ALL).unwrap();
    }
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    let runs_ok = ta == tb;
    outcome(
        data_ok && grid_ok && runs_ok,
        format!("{datasets} datasets round-trip {data_ok}; grids round-trip {grid_ok}; two runs, {} files identical {runs_ok}", ta.len()),
    )
}

#[test]
fn acceptance() {
    let [c7, c8, c9] = benchmark();
    let results = [
        ("gradient correctness", gradients()),
        ("SAM closed form", sam_closed_form()),
        ("per-sample gradient variance", variance()),
        ("perturbation ascent", ascent()),
        ("full-objective gradient", full_objective()),
        ("disabled UDIM reduces to SAM", reduction()),
        ("inconsistency mechanism", c7),
        ("worst-target generalization", c8),
        ("data-space sharpness grid", c9),
        ("determinism and formats", determinism()),
    ];
    for (i, (name, o)) in results.iter().enumerate() {
        println!("criterion {:>2} {} {name}: {}", i + 1, if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, (_, o))| !o.passed).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
