//! Paired SAM vs UDIM-w/-SAM runs on the rotated two-moons SDG benchmark.
//! Hyperparameters come from env vars so sweeps need no rebuild.

use std::env;

use udim_core::analysis::{data_sharpness_grid, estimate_inconsistency};
use udim_core::domains::BenchmarkSpec;
use udim_core::nn::Activation;
use udim_core::optim::{OptimizerConfig, Sharpness, BaseOptimizer};
use udim_core::train::{train, Method, TrainSpec};
use udim_core::udim::{PerturbMode, UdimConfig};
use udim_core::LossKind;

fn var<T: std::str::FromStr>(k: &str, d: T) -> T {
    env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
}

fn main() {
    let hidden: usize = var("HIDDEN", 16);
    let iters: usize = var("ITERS", 2000);
    let seeds: u64 = var("SEEDS", 5);
    let seed0: u64 = var("SEED0", 0);
    let bs: usize = var("BS", 32);
    let ubs: usize = var("UBS", bs);
    let cfg = UdimConfig {
        rho_x: var("RHOX", 1.0),
        lambda1: var("L1", 1.0),
        rho_prime: var("RHOP", 0.05),
        warmup_fraction: var("WARM", 0.5),
        perturb_mode: if var("UNNORM", 0) == 1 { PerturbMode::Unnormalized } else { PerturbMode::Normalized },
        ..UdimConfig::default()
    };
    let opt = OptimizerConfig {
        learning_rate: var("LR", 0.05),
        base: if var("ADAM", 0) == 1 { BaseOptimizer::AdamLite } else { BaseOptimizer::Sgd },
        ..OptimizerConfig::default()
    };
    let mut wins7 = 0;
    let mut acc = [0.0, 0.0];
    let mut wins8 = 0;
    let mut sharp = [vec![], vec![]];
    for s in seed0..seed0 + seeds {
        let bench = BenchmarkSpec::rotated_moons_sdg(500, s);
        let doms = bench.build().unwrap();
        let spec = TrainSpec {
            layer_dims: vec![2, hidden, hidden, 2],
            activation: Activation::Tanh,
            loss_kind: LossKind::CrossEntropy,
            iters,
            batch_size: bs,
            udim_batch_size: Some(ubs),
            eval_every: iters,
            seed: s,
        };
        let mut res = vec![];
        for (k, method) in [Method::Base(Sharpness::Sam), Method::Udim].into_iter().enumerate() {
            let out = train(&spec, method, &doms[..1], &doms[1..], &cfg, &opt).unwrap();
            let mut m = out.model;
            let mut inc: f64 = 0.0;
            let mut worst: f64 = 1.0;
            let mut accs = vec![];
            for t in &doms[1..] {
                let e = estimate_inconsistency(&mut m, &doms[0], t, 0.1, 0.05, 64, s).unwrap();
                inc = inc.max(e.value);
                let a = m.accuracy(t).unwrap();
                accs.push(a);
                worst = worst.min(a);
            }
            let g = data_sharpness_grid(&m, doms.last().unwrap(), 0.5, 11, s).unwrap();
            sharp[k].push(g.sharpness());
            println!(
                "seed {s} {:5} src {:.3} inc {:.4} worst {:.3} accs {:?} sharp {:.4}",
                if k == 0 { "sam" } else { "udim" },
                m.accuracy(&doms[0]).unwrap(),
                inc,
                worst,
                accs.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
                g.sharpness()
            );
            res.push((inc, worst));
        }
        if res[1].0 <= res[0].0 {
            wins7 += 1;
        }
        if res[1].1 > res[0].1 {
            wins8 += 1;
        }
        acc[0] += res[0].1;
        acc[1] += res[1].1;
    }
    let med = |v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    println!(
        "inc wins {wins7}/{seeds}; worst acc sam {:.4} udim {:.4} wins {wins8}; sharp med sam {:.4} udim {:.4}",
        acc[0] / seeds as f64,
        acc[1] / seeds as f64,
        med(&mut sharp[0]),
        med(&mut sharp[1])
    );
}
