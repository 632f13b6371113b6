//! The verification suite run by `owm check`.
//!
//! Every check reports the quantity it measured next to its threshold. The
//! gradient functions under test are reached through [`Hooks`] so that a test
//! can substitute a corrupted implementation and watch the suite fail.

use std::io::Write;
use std::ops::Range;
use std::time::Instant;

use ndarray::{Array1, Array2, Array3, Dimension};
use rand::Rng;

use crate::agents::{self, AgentConfig, AgentKind, CheckpointRow, RunRecord};
use crate::error::Result;
use crate::imagination::{
    exact_state_marginals, lambda_returns, rollout, ImaginedBatch, ImaginedTrajectory, ReturnNormalizer, SoftmaxPolicy, StartStates,
};
use crate::losses::{self, AlphaSchedule};
use crate::mdp::{self, riverswim, Transition};
use crate::oracle::{self, exact_j, exact_j_gradient, finite_difference, value_iteration};
use crate::rng::seeded;
use crate::world_model::{self, GradientTensor, SoftmaxDynamicsModel};

use super::stats;

pub type ModelGradientFn = fn(&SoftmaxDynamicsModel<f64>, &[Transition<f64>]) -> Result<GradientTensor<f64>>;
pub type OptimisticGradientFn = fn(&SoftmaxDynamicsModel<f64>, &ImaginedBatch<f64>, f64, f64) -> Result<GradientTensor<f64>>;
pub type EntropyGradientFn = fn(&SoftmaxDynamicsModel<f64>, usize, usize) -> Result<(f64, Array1<f64>)>;
pub type PolicyGradientFn = fn(&SoftmaxPolicy<f64>, &ImaginedBatch<f64>, f64) -> Result<Array2<f64>>;

/// Implementations exercised by the gradient checks.
#[derive(Clone, Copy)]
pub struct Hooks {
    pub nll_gradient: ModelGradientFn,
    pub model_entropy_gradient: EntropyGradientFn,
    pub policy_gradient: PolicyGradientFn,
    pub optimistic_gradient: OptimisticGradientFn,
}

fn model_entropy(m: &SoftmaxDynamicsModel<f64>, s: usize, a: usize) -> Result<(f64, Array1<f64>)> {
    m.entropy_and_gradient(s, a)
}

impl Default for Hooks {
    fn default() -> Self {
        Self {
            nll_gradient: world_model::nll_gradient,
            model_entropy_gradient: model_entropy,
            policy_gradient: losses::policy_gradient,
            optimistic_gradient: losses::optimistic_dynamics_gradient,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
    pub seconds: f64,
}

impl CheckResult {
    fn at_most(name: &'static str, measured: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            name,
            passed: measured <= threshold,
            measured,
            threshold,
            detail: detail.into(),
            seconds: 0.0,
        }
    }
}

#[derive(Clone, Copy)]
pub struct CheckOptions {
    pub hooks: Hooks,
    /// Random instances per gradient check.
    pub instances: usize,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            hooks: Hooks::default(),
            instances: 100,
            seed: 7,
        }
    }
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, with a floor on the denominator.
pub fn relative_error<D: Dimension>(a: &ndarray::Array<f64, D>, b: &ndarray::Array<f64, D>) -> f64 {
    let norm = |x: &ndarray::Array<f64, D>| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    diff / norm(a).max(norm(b)).max(1e-12)
}

fn random_model(rng: &mut impl Rng, ns: usize, na: usize) -> SoftmaxDynamicsModel<f64> {
    SoftmaxDynamicsModel::from_logits(Array3::from_shape_fn((ns, na, ns), |_| rng.gen_range(-2.0..2.0))).expect("finite logits")
}

fn random_policy(rng: &mut impl Rng, ns: usize, na: usize) -> SoftmaxPolicy<f64> {
    SoftmaxPolicy::from_logits(Array2::from_shape_fn((ns, na), |_| rng.gen_range(-2.0..2.0))).expect("finite logits")
}

fn random_transitions(rng: &mut impl Rng, ns: usize, na: usize, n: Range<usize>) -> Vec<Transition<f64>> {
    let n = if n.is_empty() { n.start } else { rng.gen_range(n) };
    (0..n)
        .map(|i| Transition {
            s: rng.gen_range(0..ns),
            a: rng.gen_range(0..na),
            r: 0.0,
            s_next: rng.gen_range(0..ns),
            t: i as u64 + 1,
        })
        .collect()
}

/// A frozen batch with arbitrary advantages.
fn random_batch(rng: &mut impl Rng, ns: usize, na: usize, n: Range<usize>, l: Range<usize>) -> ImaginedBatch<f64> {
    let (n, l) = (rng.gen_range(n), rng.gen_range(l));
    let trajectories = (0..n)
        .map(|_| ImaginedTrajectory {
            states: (0..=l).map(|_| rng.gen_range(0..ns)).collect(),
            actions: (0..l).map(|_| rng.gen_range(0..na)).collect(),
            rewards: (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            values: (0..=l).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            lambda_returns: (0..l).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            advantages: (0..l).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        })
        .collect();
    ImaginedBatch {
        trajectories,
        scale_used: Some(1.0),
    }
}

fn random_simplex(rng: &mut impl Rng, n: usize) -> Array1<f64> {
    let w: Array1<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total = w.sum();
    w / total
}

const FD_STEP: f64 = 1e-5;

/// Mean log-likelihood gradient against central differences.
pub fn check_nll_gradient(opts: &CheckOptions) -> CheckResult {
    let mut rng = seeded(opts.seed, 100);
    let mut worst = 0.0f64;
    for _ in 0..opts.instances {
        let (ns, na) = (rng.gen_range(2..5), rng.gen_range(1..4));
        let m = random_model(&mut rng, ns, na);
        let batch = random_transitions(&mut rng, ns, na, 1..30);
        let g = match (opts.hooks.nll_gradient)(&m, &batch) {
            Ok(g) => g,
            Err(e) => return CheckResult::at_most("nll_gradient_matches_finite_differences", f64::INFINITY, 1e-5, e.to_string()),
        };
        let fd = finite_difference(
            |z: &Array3<f64>| SoftmaxDynamicsModel::from_logits(z.clone()).unwrap().mean_log_likelihood(&batch).unwrap(),
            m.logits(),
            FD_STEP,
        );
        worst = worst.max(relative_error(&g, &fd));
    }
    CheckResult::at_most(
        "nll_gradient_matches_finite_differences",
        worst,
        1e-5,
        format!("max relative error over {} instances", opts.instances),
    )
}

pub fn check_model_entropy_gradient(opts: &CheckOptions) -> CheckResult {
    let mut rng = seeded(opts.seed, 101);
    let mut worst = 0.0f64;
    for _ in 0..opts.instances {
        let (ns, na) = (rng.gen_range(2..6), rng.gen_range(1..4));
        let m = random_model(&mut rng, ns, na);
        let (s, a) = (rng.gen_range(0..ns), rng.gen_range(0..na));
        let (_, g) = match (opts.hooks.model_entropy_gradient)(&m, s, a) {
            Ok(x) => x,
            Err(e) => return CheckResult::at_most("model_entropy_gradient_matches_finite_differences", f64::INFINITY, 1e-5, e.to_string()),
        };
        let row = m.logits().slice(ndarray::s![s, a, ..]).to_owned();
        let fd = finite_difference(
            |z: &Array1<f64>| crate::categorical::entropy(crate::categorical::softmax(z.view()).view()),
            &row,
            FD_STEP,
        );
        worst = worst.max(relative_error(&g, &fd));
    }
    CheckResult::at_most(
        "model_entropy_gradient_matches_finite_differences",
        worst,
        1e-5,
        format!("max relative error over {} instances", opts.instances),
    )
}

/// Policy gradient with zero advantages isolates the entropy bonus.
pub fn check_policy_entropy_gradient(opts: &CheckOptions) -> CheckResult {
    let mut rng = seeded(opts.seed, 102);
    let mut worst = 0.0f64;
    for _ in 0..opts.instances {
        let (ns, na) = (rng.gen_range(2..5), rng.gen_range(2..5));
        let policy = random_policy(&mut rng, ns, na);
        let mut batch = random_batch(&mut rng, ns, na, 1..4, 1..6);
        for t in &mut batch.trajectories {
            t.advantages.iter_mut().for_each(|x| *x = 0.0);
        }
        let g = match (opts.hooks.policy_gradient)(&policy, &batch, 1.0) {
            Ok(g) => g,
            Err(e) => return CheckResult::at_most("policy_entropy_gradient_matches_finite_differences", f64::INFINITY, 1e-5, e.to_string()),
        };
        let fd = finite_difference(
            |z: &Array2<f64>| losses::policy_surrogate(&SoftmaxPolicy::from_logits(z.clone()).unwrap(), &batch, 1.0),
            policy.logits(),
            FD_STEP,
        );
        worst = worst.max(relative_error(&g, &fd));
    }
    CheckResult::at_most(
        "policy_entropy_gradient_matches_finite_differences",
        worst,
        1e-5,
        format!("max relative error over {} instances", opts.instances),
    )
}

/// Full policy gradient (advantage and entropy terms).
pub fn check_policy_gradient(opts: &CheckOptions) -> CheckResult {
    let mut rng = seeded(opts.seed, 103);
    let mut worst = 0.0f64;
    for _ in 0..opts.instances {
        let (ns, na) = (rng.gen_range(2..5), rng.gen_range(2..5));
        let policy = random_policy(&mut rng, ns, na);
        let batch = random_batch(&mut rng, ns, na, 1..4, 1..6);
        let c = rng.gen_range(0.0..0.5);
        let g = match (opts.hooks.policy_gradient)(&policy, &batch, c) {
            Ok(g) => g,
            Err(e) => return CheckResult::at_most("policy_gradient_matches_finite_differences", f64::INFINITY, 1e-5, e.to_string()),
        };
        let fd = finite_difference(
            |z: &Array2<f64>| losses::policy_surrogate(&SoftmaxPolicy::from_logits(z.clone()).unwrap(), &batch, c),
            policy.logits(),
            FD_STEP,
        );
        worst = worst.max(relative_error(&g, &fd));
    }
    CheckResult::at_most(
        "policy_gradient_matches_finite_differences",
        worst,
        1e-5,
        format!("max relative error over {} instances", opts.instances),
    )
}

/// Optimistic term alone on frozen trajectories.
pub fn check_optimistic_gradient(opts: &CheckOptions) -> CheckResult {
    let mut rng = seeded(opts.seed, 104);
    let mut worst = 0.0f64;
    for _ in 0..opts.instances {
        let (ns, na) = (rng.gen_range(2..5), rng.gen_range(1..4));
        let m = random_model(&mut rng, ns, na);
        let batch = random_batch(&mut rng, ns, na, 1..5, 1..6);
        let (alpha, eta) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..0.5));
        let g = match (opts.hooks.optimistic_gradient)(&m, &batch, alpha, eta) {
            Ok(g) => g,
            Err(e) => return CheckResult::at_most("optimistic_gradient_matches_finite_differences", f64::INFINITY, 1e-5, e.to_string()),
        };
        let fd = finite_difference(
            |z: &Array3<f64>| -losses::optimistic_loss(&SoftmaxDynamicsModel::from_logits(z.clone()).unwrap(), &batch, alpha, eta).unwrap().0,
            m.logits(),
            FD_STEP,
        );
        worst = worst.max(relative_error(&g, &fd));
    }
    CheckResult::at_most(
        "optimistic_gradient_matches_finite_differences",
        worst,
        1e-5,
        format!("max relative error over {} instances", opts.instances),
    )
}

/// The whole model objective ascended in training: mean log-likelihood of
/// real data minus the optimistic loss.
pub fn check_composite_gradient(opts: &CheckOptions) -> CheckResult {
    let mut rng = seeded(opts.seed, 105);
    let mut worst = 0.0f64;
    for _ in 0..opts.instances {
        let (ns, na) = (rng.gen_range(2..5), rng.gen_range(1..4));
        let m = random_model(&mut rng, ns, na);
        let real = random_transitions(&mut rng, ns, na, 1..20);
        let batch = random_batch(&mut rng, ns, na, 1..5, 1..6);
        let (alpha, eta) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..0.5));
        let g = match ((opts.hooks.nll_gradient)(&m, &real), (opts.hooks.optimistic_gradient)(&m, &batch, alpha, eta)) {
            (Ok(a), Ok(b)) => a + b,
            (Err(e), _) | (_, Err(e)) => return CheckResult::at_most("composite_model_gradient_matches_finite_differences", f64::INFINITY, 1e-4, e.to_string()),
        };
        let fd = finite_difference(
            |z: &Array3<f64>| {
                let mz = SoftmaxDynamicsModel::from_logits(z.clone()).unwrap();
                mz.mean_log_likelihood(&real).unwrap() - losses::optimistic_loss(&mz, &batch, alpha, eta).unwrap().0
            },
            m.logits(),
            FD_STEP,
        );
        worst = worst.max(relative_error(&g, &fd));
    }
    CheckResult::at_most(
        "composite_model_gradient_matches_finite_differences",
        worst,
        1e-4,
        format!("max relative error over {} instances", opts.instances),
    )
}

pub fn check_rbmle_gradient(opts: &CheckOptions) -> CheckResult {
    let mut rng = seeded(opts.seed, 106);
    let mut worst = 0.0f64;
    for _ in 0..opts.instances {
        let (ns, na) = (rng.gen_range(2..5), rng.gen_range(1..4));
        let m = random_model(&mut rng, ns, na);
        let buffer = random_transitions(&mut rng, ns, na, 0..20);
        let batch = random_batch(&mut rng, ns, na, 1..5, 1..6);
        let alpha = rng.gen_range(0.0..1.0);
        let t = rng.gen_range(1..100);
        let g = losses::rbmle_model_gradient(&m, &batch, &buffer, alpha, t).expect("t >= 1");
        let fd = finite_difference(
            |z: &Array3<f64>| losses::rbmle_surrogate(&SoftmaxDynamicsModel::from_logits(z.clone()).unwrap(), &batch, &buffer, alpha, t).unwrap(),
            m.logits(),
            FD_STEP,
        );
        worst = worst.max(relative_error(&g, &fd));
    }
    CheckResult::at_most(
        "rbmle_gradient_matches_finite_differences",
        worst,
        1e-4,
        format!("max relative error over {} instances", opts.instances),
    )
}

/// Enumerated score-function gradient against differentiating the exact return.
pub fn check_exact_return_gradient(opts: &CheckOptions) -> CheckResult {
    let mut rng = seeded(opts.seed, 107);
    let mut worst = 0.0f64;
    let n = opts.instances.min(30);
    for _ in 0..n {
        let (ns, na) = (rng.gen_range(2..4), rng.gen_range(1..3));
        let l = rng.gen_range(2..5);
        let m = random_model(&mut rng, ns, na);
        let policy = random_policy(&mut rng, ns, na).probabilities();
        let rewards = Array2::from_shape_fn((ns, na), |_| rng.gen_range(-1.0..1.0));
        let start = random_simplex(&mut rng, ns);
        let g = exact_j_gradient(&m, rewards.view(), policy.view(), start.view(), l).expect("small instance");
        let fd = finite_difference(
            |z: &Array3<f64>| {
                let p = SoftmaxDynamicsModel::from_logits(z.clone()).unwrap().probabilities();
                exact_j(p.view(), rewards.view(), policy.view(), start.view(), l)
            },
            m.logits(),
            FD_STEP,
        );
        worst = worst.max(relative_error(&g, &fd));
    }
    CheckResult::at_most("exact_return_gradient_matches_finite_differences", worst, 1e-6, format!("max relative error over {n} instances"))
}

/// Monte-Carlo score-function estimator against the enumerated expectation.
///
/// `measured` is the largest per-coordinate |z| = |mean - exact| / SE.
pub fn check_score_function_unbiased(instances: usize, n_traj: usize, max_z: f64, seed: u64) -> CheckResult {
    let mut rng = seeded(seed, 108);
    let mut worst = 0.0f64;
    let mut coords = 0usize;
    for _ in 0..instances {
        let (ns, na) = (2, 2);
        let l = rng.gen_range(1..=4);
        let m = random_model(&mut rng, ns, na);
        let policy = random_policy(&mut rng, ns, na);
        let rewards = Array2::from_shape_fn((ns, na), |_| rng.gen_range(-1.0..1.0));
        let start = random_simplex(&mut rng, ns);
        let exact = exact_j_gradient(&m, rewards.view(), policy.probabilities().view(), start.view(), l).expect("small instance");
        let batch = rollout(&m, rewards.view(), &policy, StartStates::Initial(start.view()), n_traj, l, &mut rng).expect("valid rollout");
        let mut sum = m.zero_gradient();
        let mut sum_sq = m.zero_gradient();
        for traj in batch.trajectories {
            let single = ImaginedBatch {
                trajectories: vec![traj],
                scale_used: None,
            };
            let g = losses::rbmle_model_gradient(&m, &single, &[], 1.0, 1).expect("t >= 1");
            sum += &g;
            sum_sq += &g.mapv(|x| x * x);
        }
        let nf = n_traj as f64;
        for ((&s, &sq), &e) in sum.iter().zip(sum_sq.iter()).zip(exact.iter()) {
            let mean = s / nf;
            let var = ((sq - s * s / nf) / (nf - 1.0)).max(0.0);
            let se = (var / nf).sqrt();
            let z = if se > 0.0 {
                (mean - e).abs() / se
            } else if (mean - e).abs() < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z);
            coords += 1;
        }
    }
    CheckResult::at_most(
        "score_function_estimator_is_unbiased",
        worst,
        max_z,
        format!("max |z| over {coords} coordinates, {instances} instances x {n_traj} trajectories"),
    )
}

pub fn check_bellman_residuals() -> CheckResult {
    let mut envs = Vec::new();
    for n in [3, 6, 12] {
        envs.push(mdp::make_riverswim::<f64>(n).expect("valid size"));
    }
    for n in [4, 8, 12] {
        envs.push(mdp::make_sparse_chain::<f64>(n, 1.0).expect("valid size"));
    }
    let (truth, decoy) = mdp::make_two_model_trap::<f64>();
    envs.push(truth);
    envs.push(decoy);
    let mut worst = 0.0f64;
    for env in &envs {
        match value_iteration(env, 0.95, 1e-12) {
            Ok(sol) => worst = worst.max(sol.bellman_residual),
            Err(e) => return CheckResult::at_most("bellman_residual_of_solver", f64::INFINITY, 1e-10, e.to_string()),
        }
    }
    CheckResult::at_most("bellman_residual_of_solver", worst, 1e-10, format!("max residual over {} environments", envs.len()))
}

pub fn check_riverswim_oracle() -> CheckResult {
    let env = mdp::make_riverswim::<f64>(6).expect("valid size");
    let sol = oracle::solve(&env).expect("solvable");
    let wrong = sol.optimal_policy.iter().filter(|&&a| a != riverswim::RIGHT).count();
    CheckResult::at_most("riverswim6_optimal_policy_is_all_right", wrong as f64, 0.0, "states whose optimal action is not RIGHT")
}

/// λ-return recursion against its closed forms at λ = 0 and λ = 1, bit for bit.
pub fn check_lambda_returns(batches: usize, seed: u64) -> CheckResult {
    let mut rng = seeded(seed, 109);
    let mut mismatches = 0usize;
    for _ in 0..batches {
        let l = rng.gen_range(1..20);
        let gamma = rng.gen_range(0.5..1.0);
        let rewards: Vec<f64> = (0..l).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let values: Vec<f64> = (0..=l).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let g0 = lambda_returns(&rewards, &values, gamma, 0.0).expect("valid");
        let g1 = lambda_returns(&rewards, &values, gamma, 1.0).expect("valid");
        for i in 0..l {
            if g0[i].to_bits() != (rewards[i] + gamma * values[i + 1]).to_bits() {
                mismatches += 1;
            }
            // Discounted return bootstrapped from V_L, nested from the end.
            let mut mc = values[l];
            for k in (i..l).rev() {
                mc = rewards[k] + gamma * mc;
            }
            if g1[i].to_bits() != mc.to_bits() {
                mismatches += 1;
            }
        }
    }
    CheckResult::at_most("lambda_return_closed_forms", mismatches as f64, 0.0, format!("non-identical entries over {batches} batches"))
}

/// The three normalizer examples and both sides of the `max(1, S)` clamp.
pub fn check_normalizer() -> CheckResult {
    let mut failures = Vec::new();
    let mut n = ReturnNormalizer::<f64>::new(0.99);
    n.update(&[2.5; 16]).expect("nonempty");
    let after_one = n.ema_range();
    n.update(&[2.5; 16]).expect("nonempty");
    if !(after_one == 0.0 && n.ema_range() == 0.0 && n.denominator() == 1.0) {
        failures.push("constant returns");
    }
    let mut n = ReturnNormalizer::<f64>::new(0.99);
    let ramp: Vec<f64> = (0..=100).map(f64::from).collect();
    if n.update(&ramp).ok() != Some(90.0) {
        failures.push("ramp 0..100");
    }
    // Sorted samples of 21 values whose 5th/95th percentiles are 0 and `range`.
    let spread = |range: f64| {
        let mut v = vec![-1.0, 0.0];
        v.extend((1..=17).map(|i| range * f64::from(i) / 18.0));
        v.extend([range, range + 1.0]);
        v
    };
    let mut n = ReturnNormalizer::<f64>::new(0.99);
    let first = n.update(&spread(10.0)).ok();
    let second = n.update(&spread(20.0)).ok();
    if first != Some(10.0) || second != Some(10.1) {
        failures.push("ranges 10 then 20");
    }
    if n.denominator() != 10.1 {
        failures.push("denominator above clamp");
    }
    let mut n = ReturnNormalizer::<f64>::new(0.99);
    n.update(&spread(0.5)).expect("nonempty");
    if n.ema_range() != 0.5 || n.denominator() != 1.0 {
        failures.push("denominator below clamp");
    }
    if n.update(&[]).is_ok() {
        failures.push("empty input accepted");
    }
    CheckResult::at_most("normalizer_examples", failures.len() as f64, 0.0, failures.join(", "))
}

/// OWM with α ≡ 0 and η = 0 against CE on short RiverSwim runs.
pub fn check_degeneracy(seeds: &[u64], budget: u64) -> CheckResult {
    let env = mdp::make_riverswim::<f64>(6).expect("valid size");
    let mut differing = 0usize;
    for &seed in seeds {
        let owm = AgentConfig {
            agent_kind: AgentKind::Owm,
            alpha_schedule: AlphaSchedule::constant(0.0),
            eta: 0.0,
            seed,
            ..AgentConfig::default()
        };
        let ce = AgentConfig {
            agent_kind: AgentKind::Ce,
            ..owm.clone()
        };
        let a = agents::train(&env, &owm, budget, budget / 4).map(|r| r.to_csv_string());
        let b = agents::train(&env, &ce, budget, budget / 4).map(|r| r.to_csv_string());
        match (a, b) {
            (Ok(a), Ok(b)) if a == b => {}
            _ => differing += 1,
        }
    }
    CheckResult::at_most(
        "zero_optimism_matches_certainty_equivalence",
        differing as f64,
        0.0,
        format!("runs whose records differ, {} seeds x {budget} steps", seeds.len()),
    )
}

pub fn check_imagined_marginals(seed: u64) -> CheckResult {
    let mut rng = seeded(seed, 110);
    let m = random_model(&mut rng, 3, 2);
    let policy = random_policy(&mut rng, 3, 2);
    let rewards = Array2::zeros((3, 2));
    let start = random_simplex(&mut rng, 3);
    let exact = exact_state_marginals(&m, &policy, start.view(), 4);
    let n = 40_000;
    let batch = rollout(&m, rewards.view(), &policy, StartStates::Initial(start.view()), n, 4, &mut rng).expect("valid rollout");
    let mut worst = 0.0f64;
    for (step, p) in exact.iter().enumerate() {
        let mut freq = [0.0; 3];
        for t in &batch.trajectories {
            freq[t.states[step]] += 1.0 / n as f64;
        }
        for s in 0..3 {
            worst = worst.max((freq[s] - p[s]).abs());
        }
    }
    CheckResult::at_most("imagined_state_marginals_match_exact_chain", worst, 0.015, format!("max |freq - exact| over {n} rollouts"))
}

pub fn check_aggregation() -> CheckResult {
    let mut failures = Vec::new();
    let xs = [1.0, 2.0, 3.0, 4.0];
    if stats::mean(&xs).ok() != Some(2.5) || stats::median(&xs).ok() != Some(2.5) || stats::iqm(&xs).ok() != Some(2.5) {
        failures.push("finals (1,2,3,4)");
    }
    if stats::iqm(&[1.0, 2.0, 3.0, 4.0, 100.0]).ok() != Some(3.0) {
        failures.push("iqm of five");
    }
    if stats::smooth(&[0.0, 3.0, 0.0, 3.0], 3) != vec![1.5, 1.0, 2.0, 1.5] {
        failures.push("smoothing");
    }
    if stats::sem(&[4.0]).ok() != Some(None) {
        failures.push("single-seed sem");
    }
    CheckResult::at_most("aggregation_examples", failures.len() as f64, 0.0, failures.join(", "))
}

pub fn check_csv_round_trip(seed: u64) -> CheckResult {
    let mut rng = seeded(seed, 111);
    let rec = RunRecord {
        rows: (0..25)
            .map(|i| CheckpointRow {
                env_step: 1000 * (i + 1),
                eval_mean_return: rng.gen_range(-10.0..10.0),
                eval_sem: rng.gen_range(0.0..1.0),
                model_nll: rng.gen_range(0.0..3.0),
                policy_entropy: rng.gen::<f64>(),
                model_entropy: rng.gen::<f64>(),
                alpha_value: 1e-4 / (i as f64 + 1.0).sqrt(),
                s_value: rng.gen_range(0.0..50.0),
                wallclock: 0.0,
            })
            .collect(),
    };
    let text = rec.to_csv_string();
    let header_ok = text.lines().next() == Some(agents::CSV_HEADER.join(",").as_str());
    let back = RunRecord::read_csv(text.as_bytes()).ok();
    let bad = usize::from(!header_ok) + usize::from(back.as_ref() != Some(&rec));
    CheckResult::at_most("run_record_csv_round_trip", bad as f64, 0.0, "header mismatches plus round-trip mismatches")
}

pub fn check_evaluation_protocol(seed: u64) -> CheckResult {
    let env = mdp::make_riverswim::<f64>(6).expect("valid size");
    let policy = SoftmaxPolicy::<f64>::uniform(6, 2);
    let mut rng = seeded(seed, 112);
    let out = agents::evaluate(&env, &policy, agents::EVAL_EPISODES, &mut rng);
    let n = out.map(|r| r.returns.len()).unwrap_or(0);
    CheckResult::at_most(
        "evaluation_uses_twenty_episodes",
        (n as f64 - 20.0).abs() + (agents::EVAL_EPISODES as f64 - 20.0).abs(),
        0.0,
        format!("{n} episodes evaluated"),
    )
}

/// Every check, in a fixed order.
pub fn run_checks(opts: &CheckOptions) -> Vec<CheckResult> {
    type Job<'a> = Box<dyn Fn() -> CheckResult + 'a>;
    let jobs: Vec<Job> = vec![
        Box::new(|| check_nll_gradient(opts)),
        Box::new(|| check_model_entropy_gradient(opts)),
        Box::new(|| check_policy_entropy_gradient(opts)),
        Box::new(|| check_policy_gradient(opts)),
        Box::new(|| check_optimistic_gradient(opts)),
        Box::new(|| check_composite_gradient(opts)),
        Box::new(|| check_rbmle_gradient(opts)),
        Box::new(|| check_exact_return_gradient(opts)),
        Box::new(|| check_score_function_unbiased(3, 20_000, 4.5, opts.seed)),
        Box::new(check_bellman_residuals),
        Box::new(check_riverswim_oracle),
        Box::new(|| check_lambda_returns(100, opts.seed)),
        Box::new(check_normalizer),
        Box::new(|| check_imagined_marginals(opts.seed)),
        Box::new(|| check_degeneracy(&[0, 1], 2000)),
        Box::new(check_aggregation),
        Box::new(|| check_csv_round_trip(opts.seed)),
        Box::new(|| check_evaluation_protocol(opts.seed)),
    ];
    jobs.iter()
        .map(|job| {
            let t0 = Instant::now();
            let mut r = job();
            r.seconds = t0.elapsed().as_secs_f64();
            r
        })
        .collect()
}

/// One line per check; returns whether all passed.
pub fn print_report<W: Write>(results: &[CheckResult], mut out: W) -> std::io::Result<bool> {
    for r in results {
        writeln!(
            out,
            "{} {:<52} measured={:.3e} threshold={:.3e} ({:.2}s) {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.measured,
            r.threshold,
            r.seconds,
            r.detail
        )?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    writeln!(out, "{} checks, {} failed", results.len(), failed)?;
    Ok(failed == 0)
}
