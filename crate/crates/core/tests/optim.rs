use rand::Rng;
use udim_core::domains::make_moons_domains;
use udim_core::objective::{BatchObjective, Objective, Quadratic};
use udim_core::optim::{
    base_step, gam_step, sagm_step, sam_epsilon, sam_step, sharpness_gradient, sharpness_step, BaseOptimizer,
    EpsilonScaling, Optimizer, OptimizerConfig, Sharpness, WeightDecay,
};
use udim_core::rng;
use udim_core::{LossKind, Mlp};

const SWEEP: usize = 3600;

fn random_quadratic(seed: u64) -> Quadratic {
    let mut r = rng::stream(seed, 21);
    // A = R diag(l1, l2) R^T with random rotation and positive spectrum.
    let t: f64 = r.random_range(0.0..std::f64::consts::PI);
    let (l1, l2) = (r.random_range(0.1..5.0), r.random_range(0.1..20.0));
    let (c, s) = (t.cos(), t.sin());
    let a = vec![
        l1 * c * c + l2 * s * s,
        (l1 - l2) * c * s,
        (l1 - l2) * c * s,
        l1 * s * s + l2 * c * c,
    ];
    let start = vec![r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)];
    Quadratic::new(a, vec![0.0, 0.0], start)
}

fn sweep_max(rho: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    (0..SWEEP)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / SWEEP as f64;
            f(&[rho * a.cos(), rho * a.sin()])
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn sam_epsilon_rescales_to_rho() {
    let e = sam_epsilon(&[3.0, 4.0], 0.05, EpsilonScaling::UnitNorm).unwrap();
    assert!((e.epsilon[0] - 0.03).abs() < 1e-15 && (e.epsilon[1] - 0.04).abs() < 1e-15);
    let z = sam_epsilon(&[0.0, 0.0], 0.05, EpsilonScaling::UnitNorm).unwrap();
    assert!(z.degenerate && z.epsilon == vec![0.0, 0.0]);
    let mut r = rng::stream(1, 0);
    for _ in 0..200 {
        let g = rng::normal_vec(&mut r, 7);
        let e = sam_epsilon(&g, 0.3, EpsilonScaling::UnitNorm).unwrap();
        let n: f64 = e.epsilon.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 0.3).abs() <= 1e-12);
    }
}

#[test]
fn sam_epsilon_nearly_maximizes_the_perturbed_loss() {
    let q = Quadratic::diagonal(&[1.0, 10.0], vec![1.0, 1.0]);
    let e = sam_epsilon(&q.grad_at(&[1.0, 1.0]), 0.1, EpsilonScaling::UnitNorm).unwrap();
    let at = |eps: &[f64]| q.loss_at(&[1.0 + eps[0], 1.0 + eps[1]]);
    assert!(at(&e.epsilon) >= 0.999 * sweep_max(0.1, at));
    for seed in 0..50 {
        let q = random_quadratic(seed);
        let th = q.params().to_vec();
        let e = sam_epsilon(&q.grad_at(&th), 0.05, EpsilonScaling::UnitNorm).unwrap();
        let at = |eps: &[f64]| q.loss_at(&[th[0] + eps[0], th[1] + eps[1]]);
        assert!(at(&e.epsilon) >= 0.999 * sweep_max(0.05, at), "seed {seed}");
    }
}

#[test]
fn gam_max_grad_norm_tracks_brute_force() {
    for seed in 0..50 {
        let mut q = random_quadratic(seed);
        let th = q.params().to_vec();
        let cfg = OptimizerConfig { rho: 0.05, ..OptimizerConfig::default() };
        let sg = sharpness_gradient(&mut q, Sharpness::Gam, &cfg).unwrap();
        let est = sg.max_grad_norm.unwrap();
        let gnorm = |p: &[f64]| q.grad_at(p).iter().map(|v| v * v).sum::<f64>().sqrt();
        let center = gnorm(&th);
        let brute = sweep_max(0.05, |e| gnorm(&[th[0] + e[0], th[1] + e[1]]));
        assert!(est >= center * (1.0 - 1e-9), "seed {seed}: {est} < center {center}");
        assert!((est - brute).abs() <= 0.05 * brute, "seed {seed}: {est} vs {brute}");
    }
}

fn moons_objective_case(seed: u64) -> (Mlp, udim_core::DomainDataset) {
    let m = Mlp::new(&[2, 6, 2], LossKind::CrossEntropy, seed).unwrap();
    let d = make_moons_domains(24, &[0.0], 0.1, seed).unwrap().remove(0);
    (m, d)
}

#[test]
fn zero_rho_steppers_match_the_base_step_bitwise() {
    for base in [BaseOptimizer::Sgd, BaseOptimizer::AdamLite] {
        for decay in [0.0, 0.01] {
            let cfg = OptimizerConfig { base, rho: 0.0, alpha: 0.0, weight_decay: decay, ..OptimizerConfig::default() };
            for kind in [Sharpness::Sam, Sharpness::Gam] {
                let (mut a, d) = moons_objective_case(3);
                let mut b = a.clone();
                let mut oa = Optimizer::new(cfg.clone()).unwrap();
                let mut ob = Optimizer::new(cfg.clone()).unwrap();
                for _ in 0..20 {
                    base_step(&mut BatchObjective::new(&mut a, &d).unwrap(), &mut oa).unwrap();
                    sharpness_step(&mut BatchObjective::new(&mut b, &d).unwrap(), kind, &mut ob).unwrap();
                }
                assert_eq!(a.params(), b.params(), "{kind:?} {base:?}");
            }
        }
    }
}

#[test]
fn sagm_reductions() {
    let (mut m, d) = moons_objective_case(5);
    let mut obj = BatchObjective::new(&mut m, &d).unwrap();
    let zero = OptimizerConfig { rho: 0.0, alpha: 0.0, ..OptimizerConfig::default() };
    let sg = sharpness_gradient(&mut obj, Sharpness::Sagm, &zero).unwrap();
    let g = obj.grad();
    for (a, b) in sg.grad.iter().zip(&g) {
        assert_eq!(*a, 2.0 * b);
    }
    let cfg = OptimizerConfig { rho: 0.05, alpha: 0.0, ..OptimizerConfig::default() };
    let sagm = sharpness_gradient(&mut obj, Sharpness::Sagm, &cfg).unwrap();
    let sam = sharpness_gradient(&mut obj, Sharpness::Sam, &cfg).unwrap();
    let dropped: Vec<f64> = sagm.grad.iter().zip(&sagm.plain_grad).map(|(a, b)| a - b).collect();
    for (a, b) in dropped.iter().zip(&sam.grad) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn steppers_decrease_a_convex_quadratic() {
    for (kind, step) in [
        (Sharpness::Sam, sam_step::<Quadratic> as fn(&mut Quadratic, &mut Optimizer) -> _),
        (Sharpness::Sagm, sagm_step::<Quadratic>),
        (Sharpness::Gam, gam_step::<Quadratic>),
        (Sharpness::Erm, base_step::<Quadratic>),
    ] {
        let mut q = Quadratic::diagonal(&[1.0, 10.0], vec![1.0, 1.0]);
        let mut opt = Optimizer::new(OptimizerConfig { learning_rate: 0.005, rho: 0.01, ..OptimizerConfig::default() }).unwrap();
        let mut prev = q.loss();
        for i in 0..100 {
            let before = q.loss();
            let r = step(&mut q, &mut opt).unwrap();
            assert_eq!(r.pre_loss, before);
            assert!(r.post_loss <= prev, "{kind:?} step {i}: {} > {prev}", r.post_loss);
            assert_eq!(r.post_loss, q.loss());
            prev = r.post_loss;
        }
        assert!(prev < 0.5 * Quadratic::diagonal(&[1.0, 10.0], vec![1.0, 1.0]).loss());
    }
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    for kind in [Sharpness::Erm, Sharpness::Sam, Sharpness::Sagm, Sharpness::Gam] {
        let (mut m, d) = moons_objective_case(2);
        let before = m.params().to_vec();
        let mut opt = Optimizer::new(OptimizerConfig { learning_rate: 0.0, weight_decay: 0.1, ..OptimizerConfig::default() }).unwrap();
        sharpness_step(&mut BatchObjective::new(&mut m, &d).unwrap(), kind, &mut opt).unwrap();
        assert_eq!(m.params(), &before[..]);
    }
}

#[test]
fn sgd_without_decay_is_exact() {
    let (mut m, d) = moons_objective_case(4);
    let (_, g) = m.loss_and_grad(&d).unwrap();
    let expect: Vec<f64> = m.params().iter().zip(&g).map(|(p, g)| p - 0.05 * g).collect();
    let mut opt = Optimizer::new(OptimizerConfig::default()).unwrap();
    base_step(&mut BatchObjective::new(&mut m, &d).unwrap(), &mut opt).unwrap();
    assert_eq!(m.params(), &expect[..]);
}

#[test]
fn weight_decay_forms() {
    let th = [3.0, 4.0];
    let norm_form = Optimizer::new(OptimizerConfig { weight_decay: 0.5, ..OptimizerConfig::default() }).unwrap();
    assert_eq!(norm_form.weight_decay_value(&th), 2.5);
    assert_eq!(norm_form.weight_decay_grad(&th), vec![0.5 * 0.6, 0.5 * 0.8]);
    let half = Optimizer::new(OptimizerConfig {
        weight_decay: 0.5,
        decay_form: WeightDecay::HalfSquared,
        ..OptimizerConfig::default()
    })
    .unwrap();
    assert_eq!(half.weight_decay_value(&th), 6.25);
    assert_eq!(half.weight_decay_grad(&th), vec![1.5, 2.0]);
}

#[test]
fn adam_lite_converges_on_a_quadratic() {
    let mut q = Quadratic::diagonal(&[1.0, 10.0], vec![0.6, 0.8]);
    let mut opt = Optimizer::new(OptimizerConfig {
        base: BaseOptimizer::AdamLite,
        learning_rate: 0.01,
        ..OptimizerConfig::default()
    })
    .unwrap();
    for _ in 0..500 {
        base_step(&mut q, &mut opt).unwrap();
    }
    let n: f64 = q.params().iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(n < 1e-3, "|theta| = {n}");
}
