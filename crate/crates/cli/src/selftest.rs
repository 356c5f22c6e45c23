//! Quick in-process invariant suite behind `udim selftest`.

use rand::Rng;
use udim_core::domains::{decode_dataset, encode_dataset, make_moons_domains};
use udim_core::nn::per_sample_classifier_grads;
use udim_core::objective::Quadratic;
use udim_core::optim::{sam_epsilon, EpsilonScaling, OptimizerConfig, Sharpness};
use udim_core::rng;
use udim_core::train::{train, Method, TrainSpec};
use udim_core::udim::{perturb_batch, UdimConfig};
use udim_core::{DomainDataset, LossKind, Mlp, Scope, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> Check {
    match f() {
        Ok(detail) => Check { name, passed: true, detail },
        Err(detail) => Check { name, passed: false, detail },
    }
}

fn batch(seed: u64, n: usize, d: usize, c: usize) -> DomainDataset {
    let mut r = rng::stream(seed, 40);
    let x = rng::normal_vec(&mut r, n * d);
    let y = (0..n).map(|_| r.random_range(0..c)).collect();
    DomainDataset::new("selftest", Tensor::matrix(n, d, x).unwrap(), y, c).unwrap()
}

fn gradients() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let m = Mlp::new(&[3, 5, 3], LossKind::CrossEntropy, seed).map_err(|e| e.to_string())?;
        let b = batch(seed, 4, 3, 3);
        let (_, g) = m.loss_and_grad(&b).map_err(|e| e.to_string())?;
        for k in 0..m.num_params() {
            let at = |t: f64| {
                let mut p = m.clone();
                p.params_mut()[k] = t;
                p.loss(&b).unwrap()
            };
            let h = 1e-5;
            let fd = (at(m.params()[k] + h) - at(m.params()[k] - h)) / (2.0 * h);
            worst = worst.max((g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1e-3));
        }
    }
    if worst <= 1e-5 {
        Ok(format!("max rel err {worst:.2e}"))
    } else {
        Err(format!("max rel err {worst:.2e} > 1e-5"))
    }
}

fn sam_closed_form() -> Result<String, String> {
    let q = Quadratic::diagonal(&[1.0, 10.0], vec![1.0, 1.0]);
    let e = sam_epsilon(&q.grad_at(&[1.0, 1.0]), 0.1, EpsilonScaling::UnitNorm).map_err(|e| e.to_string())?;
    let at = |a: f64, b: f64| q.loss_at(&[1.0 + a, 1.0 + b]);
    let brute = (0..3600)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / 3600.0;
            at(0.1 * t.cos(), 0.1 * t.sin())
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let got = at(e.epsilon[0], e.epsilon[1]);
    if got >= 0.999 * brute {
        Ok(format!("{got:.6} vs sweep {brute:.6}"))
    } else {
        Err(format!("{got:.6} < 0.999 x {brute:.6}"))
    }
}

fn variance() -> Result<String, String> {
    let m = Mlp::new(&[2, 4, 2], LossKind::CrossEntropy, 3).map_err(|e| e.to_string())?;
    let b = batch(3, 7, 2, 2);
    let set = per_sample_classifier_grads(&m, &b).map_err(|e| e.to_string())?;
    let var = set.variance().map_err(|e| e.to_string())?;
    let head = m.grad_params(&b, Scope::Classifier).map_err(|e| e.to_string())?;
    for k in 0..var.len() {
        let mean = set.samples().iter().map(|s| s[k]).sum::<f64>() / 7.0;
        let ss: f64 = set.samples().iter().map(|s| (s[k] - mean) * (s[k] - mean)).sum();
        if var[k] != ss / 6.0 {
            return Err(format!("coordinate {k}: {} vs {}", var[k], ss / 6.0));
        }
        if (set.mean()[k] - head[k]).abs() > 1e-10 {
            return Err(format!("mean coordinate {k} differs from the head gradient"));
        }
    }
    Ok(format!("{} coordinates exact", var.len()))
}

fn perturbation_ascent() -> Result<String, String> {
    let cfg = UdimConfig { rho_x: 1e-3, ..UdimConfig::default() };
    let objective = |m: &Mlp, b: &DomainDataset| {
        let (l, g) = m.loss_and_grad(b).unwrap();
        l + cfg.rho_prime * g.iter().map(|v| v * v).sum::<f64>().sqrt()
    };
    let mut up = 0;
    for seed in 0..200 {
        let mut m = Mlp::new(&[3, 5, 2], LossKind::CrossEntropy, seed).map_err(|e| e.to_string())?;
        let b = batch(seed, 1, 3, 2);
        let pb = perturb_batch(&mut m, &b, &cfg).map_err(|e| e.to_string())?;
        if objective(&m, &pb.perturbed) >= objective(&m, &b) {
            up += 1;
        }
    }
    if up >= 190 {
        Ok(format!("{up}/200 ascended"))
    } else {
        Err(format!("only {up}/200 ascended"))
    }
}

fn reduction() -> Result<String, String> {
    let doms = make_moons_domains(40, &[0.0, 30.0], 0.1, 1).map_err(|e| e.to_string())?;
    let spec = TrainSpec {
        layer_dims: vec![2, 6, 2],
        activation: udim_core::nn::Activation::Tanh,
        loss_kind: LossKind::CrossEntropy,
        iters: 30,
        batch_size: 8,
        udim_batch_size: None,
        eval_every: 10,
        seed: 1,
    };
    let cfg = UdimConfig { lambda1: 0.0, rho_x: 0.0, ..UdimConfig::default() };
    let opt = OptimizerConfig::default();
    let a = train(&spec, Method::Base(Sharpness::Sam), &doms[..1], &doms[1..], &cfg, &opt).map_err(|e| e.to_string())?;
    let b = train(&spec, Method::Udim, &doms[..1], &doms[1..], &cfg, &opt).map_err(|e| e.to_string())?;
    if a.model.params() == b.model.params() {
        Ok("bitwise identical".into())
    } else {
        Err("trajectories differ".into())
    }
}

fn dataset_round_trip() -> Result<String, String> {
    for d in make_moons_domains(50, &[0.0, 33.0], 0.2, 9).map_err(|e| e.to_string())? {
        let text = encode_dataset(&d).map_err(|e| e.to_string())?;
        let back = decode_dataset(&text).map_err(|e| e.to_string())?;
        if back != d || encode_dataset(&back).map_err(|e| e.to_string())? != text {
            return Err(format!("domain {} changed", d.domain_id()));
        }
    }
    Ok("bit-exact".into())
}

pub fn run() -> Vec<Check> {
    vec![
        check("gradients match finite differences", gradients),
        check("sam ascent maximizes the perturbed loss", sam_closed_form),
        check("per-sample variance is exact", variance),
        check("data perturbation ascends", perturbation_ascent),
        check("disabled udim reproduces sam", reduction),
        check("datasets round-trip", dataset_round_trip),
    ]
}
