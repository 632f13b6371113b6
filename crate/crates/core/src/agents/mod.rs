//! Training loops for the optimistic agent and its baselines, plus the
//! greedy evaluation protocol.

pub mod trap;

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagination::{compute_advantages, rollout, Critic, NormalizerOrder, ReturnNormalizer, SoftmaxPolicy, StartStates};
use crate::losses::{add_optimistic_dynamics_gradient, critic_update, policy_gradient, AlphaSchedule, Direction, OptimizerKind, OptimizerState};
use crate::mdp::{ReplayBuffer, TabularMdp, Transition};
use crate::rng::{seeded, streams, RunRng};
use crate::scalar::Scalar;
use crate::world_model::{nll_gradient, RewardModel, SoftmaxDynamicsModel};

/// Episodes per evaluation checkpoint.
pub const EVAL_EPISODES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    #[default]
    Owm,
    Ce,
    CountBonus,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Owm => "owm",
            AgentKind::Ce => "ce",
            AgentKind::CountBonus => "count_bonus",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub agent_kind: AgentKind,
    pub alpha_schedule: AlphaSchedule,
    /// Model-entropy coefficient in the optimistic loss.
    pub eta: f64,
    pub gamma: f64,
    pub lam: f64,
    pub imagination_n: usize,
    pub imagination_l: usize,
    /// Model + actor + critic updates per environment step.
    pub train_ratio: usize,
    pub epsilon_collect: f64,
    pub bonus_coeff: f64,
    pub seed: u64,
    pub model_lr: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub actor_entropy: f64,
    /// Real transitions per likelihood minibatch (drawn with replacement).
    pub model_batch: usize,
    /// Imagination starts are drawn from the states of this many most recent transitions.
    pub start_window: usize,
    pub normalizer_decay: f64,
    pub normalizer_order: NormalizerOrder,
    pub optimizer: OptimizerKind,
    /// Held-out successors drawn per (s, a) pair for `model_nll`.
    pub heldout_per_pair: usize,
    /// Writes elapsed seconds into `wallclock`; off by default so records are reproducible.
    pub record_wallclock: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            agent_kind: AgentKind::Owm,
            alpha_schedule: AlphaSchedule::constant(1e-4),
            eta: 3e-4,
            gamma: 0.95,
            lam: 0.95,
            imagination_n: 16,
            imagination_l: 15,
            train_ratio: 1,
            epsilon_collect: 0.05,
            bonus_coeff: 0.0,
            seed: 0,
            model_lr: 1e-2,
            actor_lr: 1e-2,
            critic_lr: 1e-1,
            actor_entropy: 1e-3,
            model_batch: 256,
            start_window: 1024,
            normalizer_decay: 0.99,
            normalizer_order: NormalizerOrder::UpdateThenUse,
            optimizer: OptimizerKind::default(),
            heldout_per_pair: 20,
            record_wallclock: false,
        }
    }
}

fn unit_interval(field: &str, x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::config(field, format!("must lie in [0, 1], got {x}")));
    }
    Ok(())
}

fn nonnegative(field: &str, x: f64) -> Result<()> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::config(field, format!("must be a finite nonnegative number, got {x}")));
    }
    Ok(())
}

fn positive_count(field: &str, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::config(field, "must be a positive integer"));
    }
    Ok(())
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        nonnegative("alpha_schedule.base_alpha", self.alpha_schedule.base_alpha)?;
        nonnegative("eta", self.eta)?;
        unit_interval("gamma", self.gamma)?;
        unit_interval("lam", self.lam)?;
        unit_interval("epsilon_collect", self.epsilon_collect)?;
        unit_interval("normalizer_decay", self.normalizer_decay)?;
        nonnegative("bonus_coeff", self.bonus_coeff)?;
        nonnegative("model_lr", self.model_lr)?;
        nonnegative("actor_lr", self.actor_lr)?;
        nonnegative("critic_lr", self.critic_lr)?;
        nonnegative("actor_entropy", self.actor_entropy)?;
        positive_count("imagination_n", self.imagination_n)?;
        positive_count("imagination_l", self.imagination_l)?;
        positive_count("train_ratio", self.train_ratio)?;
        positive_count("model_batch", self.model_batch)?;
        positive_count("start_window", self.start_window)?;
        positive_count("heldout_per_pair", self.heldout_per_pair)?;
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::config("optimizer", "adam needs beta1, beta2 in [0, 1) and eps > 0"));
            }
        }
        Ok(())
    }
}

/// One evaluation checkpoint. Field order is the CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointRow {
    pub env_step: u64,
    pub eval_mean_return: f64,
    pub eval_sem: f64,
    pub model_nll: f64,
    pub policy_entropy: f64,
    pub model_entropy: f64,
    pub alpha_value: f64,
    #[serde(rename = "S_value")]
    pub s_value: f64,
    pub wallclock: f64,
}

pub const CSV_HEADER: [&str; 9] = [
    "env_step",
    "eval_mean_return",
    "eval_sem",
    "model_nll",
    "policy_entropy",
    "model_entropy",
    "alpha_value",
    "S_value",
    "wallclock",
];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub rows: Vec<CheckpointRow>,
}

impl RunRecord {
    pub fn final_row(&self) -> Option<&CheckpointRow> {
        self.rows.last()
    }

    pub fn final_return(&self) -> f64 {
        self.final_row().map_or(f64::NAN, |r| r.eval_mean_return)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.rows.is_empty() {
            w.write_record(CSV_HEADER).map_err(csv_error)?;
        }
        for row in &self.rows {
            w.serialize(row).map_err(csv_error)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers().map_err(csv_error)?.clone();
        if header.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(Error::Format {
                path: "<csv>".into(),
                message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
            });
        }
        let rows = r.deserialize().collect::<std::result::Result<Vec<CheckpointRow>, _>>().map_err(csv_error)?;
        Ok(Self { rows })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file)).map_err(|e| with_path(e, path))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file)).map_err(|e| with_path(e, path))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format {
            path: "<json>".into(),
            message: e.to_string(),
        })
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format {
        path: "<csv>".into(),
        message: e.to_string(),
    }
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Format { message, .. } => Error::Format {
            path: path.to_path_buf(),
            message,
        },
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub mean: f64,
    pub sem: f64,
    pub returns: Vec<f64>,
}

/// Mean and standard error (sample standard deviation over `√n`).
pub fn mean_and_sem(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    // Shifted by the first sample so that identical samples give exactly zero spread.
    let k = xs[0];
    let d: f64 = xs.iter().map(|x| x - k).sum();
    let mean = k + d / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let sq: f64 = xs.iter().map(|x| (x - k) * (x - k)).sum();
    let var = ((sq - d * d / n as f64) / (n - 1) as f64).max(0.0);
    (mean, (var / n as f64).sqrt())
}

/// Runs `episodes` episodes of `env.episode_length()` steps choosing actions
/// with `act(state)`, returning undiscounted episodic returns.
pub fn evaluate_with<T: Scalar, R: Rng + ?Sized>(
    env: &TabularMdp<T>,
    mut act: impl FnMut(usize) -> usize,
    episodes: usize,
    rng: &mut R,
    mut log: Option<&mut Vec<Vec<Transition<T>>>>,
) -> Result<EvalResult> {
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut s = env.sample_initial(rng);
        let mut ret = T::zero();
        let mut episode = Vec::new();
        for t in 0..env.episode_length() {
            let a = act(s);
            let (next, r) = env.step(s, a, rng)?;
            ret += r;
            if log.is_some() {
                episode.push(Transition { s, a, r, s_next: next, t: t as u64 });
            }
            s = next;
        }
        if let Some(log) = log.as_deref_mut() {
            log.push(episode);
        }
        returns.push(ret.as_f64());
    }
    let (mean, sem) = mean_and_sem(&returns);
    Ok(EvalResult { mean, sem, returns })
}

/// Greedy evaluation of `policy` (argmax, lowest index on ties).
pub fn evaluate<T: Scalar, R: Rng + ?Sized>(env: &TabularMdp<T>, policy: &SoftmaxPolicy<T>, episodes: usize, rng: &mut R) -> Result<EvalResult> {
    let greedy: Vec<usize> = (0..policy.num_states()).map(|s| policy.greedy(s)).collect();
    evaluate_with(env, |s| greedy[s], episodes, rng, None)
}

/// Held-out real transitions: `per_pair` successors of every `(s, a)` drawn from the true dynamics.
pub fn heldout_transitions<T: Scalar, R: Rng + ?Sized>(env: &TabularMdp<T>, per_pair: usize, rng: &mut R) -> Result<Vec<Transition<T>>> {
    let mut out = Vec::with_capacity(env.num_states() * env.num_actions() * per_pair);
    for s in 0..env.num_states() {
        for a in 0..env.num_actions() {
            for _ in 0..per_pair {
                let (s_next, r) = env.step(s, a, rng)?;
                out.push(Transition { s, a, r, s_next, t: 0 });
            }
        }
    }
    Ok(out)
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub record: RunRecord,
    pub dynamics: SoftmaxDynamicsModel<T>,
    pub policy: SoftmaxPolicy<T>,
    pub critic: Critic<T>,
    pub rewards: RewardModel<T>,
    pub buffer: ReplayBuffer<T>,
}

pub fn train<T: Scalar>(env: &TabularMdp<T>, cfg: &AgentConfig, budget: u64, checkpoint_every: u64) -> Result<RunRecord> {
    Ok(train_detailed(env, cfg, budget, checkpoint_every)?.record)
}

fn collect_action<T: Scalar>(policy: &SoftmaxPolicy<T>, s: usize, epsilon: f64, rng: &mut RunRng) -> usize {
    let u: f64 = rng.gen();
    if u < epsilon {
        rng.gen_range(0..policy.num_actions())
    } else {
        policy.sample(s, rng)
    }
}

pub fn train_detailed<T: Scalar>(env: &TabularMdp<T>, cfg: &AgentConfig, budget: u64, checkpoint_every: u64) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if checkpoint_every == 0 {
        return Err(Error::config("checkpoint_every", "must be a positive integer"));
    }
    if budget < checkpoint_every {
        return Err(Error::config("budget", format!("must be at least checkpoint_every ({checkpoint_every}), got {budget}")));
    }
    let started = Instant::now();
    let (ns, na) = (env.num_states(), env.num_actions());
    let mut rng = seeded(cfg.seed, streams::TRAIN);
    let mut eval_rng = seeded(cfg.seed, streams::EVAL);
    let heldout = heldout_transitions(env, cfg.heldout_per_pair, &mut seeded(cfg.seed, streams::HELDOUT))?;

    let mut dynamics = SoftmaxDynamicsModel::<T>::uniform(ns, na);
    let mut policy = SoftmaxPolicy::<T>::uniform(ns, na);
    let mut critic = Critic::<T>::zeros(ns);
    let mut rewards = RewardModel::<T>::new(ns, na);
    let mut normalizer = ReturnNormalizer::<T>::new(T::lit(cfg.normalizer_decay));
    let mut buffer = ReplayBuffer::<T>::unbounded();
    let mut model_opt = OptimizerState::new(cfg.optimizer, T::lit(cfg.model_lr), dynamics.logits().raw_dim());
    let mut actor_opt = OptimizerState::new(cfg.optimizer, T::lit(cfg.actor_lr), policy.logits().raw_dim());

    let (gamma, lam) = (T::lit(cfg.gamma), T::lit(cfg.lam));
    let eta = T::lit(cfg.eta);
    let actor_entropy = T::lit(cfg.actor_entropy);
    let critic_lr = T::lit(cfg.critic_lr);
    let bonus = match cfg.agent_kind {
        AgentKind::CountBonus => T::lit(cfg.bonus_coeff),
        _ => T::zero(),
    };
    let episode_length = env.episode_length();

    let mut record = RunRecord::default();
    let mut s = env.sample_initial(&mut rng);
    let mut episode_step = 0usize;
    for t in 1..=budget {
        let a = collect_action(&policy, s, cfg.epsilon_collect, &mut rng);
        let (s_next, r) = env.step(s, a, &mut rng)?;
        let tr = Transition { s, a, r, s_next, t };
        buffer.push(tr);
        rewards.update(&[tr]);
        s = s_next;
        episode_step += 1;
        if episode_step == episode_length {
            s = env.sample_initial(&mut rng);
            episode_step = 0;
        }

        let alpha_used = match cfg.agent_kind {
            AgentKind::Owm => cfg.alpha_schedule.value(t),
            _ => T::zero(),
        };
        let planning = rewards.planning_rewards(bonus);
        for _ in 0..cfg.train_ratio {
            let recent = buffer.recent_states(cfg.start_window);
            let starts = StartStates::replay_or_initial(&recent, env.initial_dist().view());
            let mut batch = rollout(&dynamics, planning.view(), &policy, starts, cfg.imagination_n, cfg.imagination_l, &mut rng)?;
            batch.attach_values(&critic);
            batch.fill_lambda_returns(gamma, lam)?;
            compute_advantages(&mut batch, &mut normalizer, cfg.normalizer_order)?;

            let minibatch = buffer.sample(cfg.model_batch, &mut rng);
            let mut model_grad = nll_gradient(&dynamics, &minibatch)?;
            if cfg.agent_kind == AgentKind::Owm {
                add_optimistic_dynamics_gradient(&dynamics, &batch, alpha_used, eta, &mut model_grad)?;
            }
            model_opt.apply(dynamics.logits_mut(), &model_grad, Direction::Ascent)?;

            let actor_grad = policy_gradient(&policy, &batch, actor_entropy)?;
            actor_opt.apply(policy.logits_mut(), &actor_grad, Direction::Ascent)?;
            critic_update(&mut critic, &batch, critic_lr);
        }

        if t % checkpoint_every == 0 {
            let eval = evaluate(env, &policy, EVAL_EPISODES, &mut eval_rng)?;
            let model_nll = -dynamics.mean_log_likelihood(&heldout)?.as_f64();
            record.rows.push(CheckpointRow {
                env_step: t,
                eval_mean_return: eval.mean,
                eval_sem: eval.sem,
                model_nll,
                policy_entropy: policy.mean_entropy().as_f64(),
                model_entropy: dynamics.mean_entropy().as_f64(),
                alpha_value: alpha_used.as_f64(),
                s_value: normalizer.ema_range().as_f64(),
                wallclock: if cfg.record_wallclock { started.elapsed().as_secs_f64() } else { 0.0 },
            });
        }
    }
    Ok(TrainOutcome {
        record,
        dynamics,
        policy,
        critic,
        rewards,
        buffer,
    })
}

/// One-hot table of the greedy actions of `policy`, for the exact oracles.
pub fn greedy_policy_table<T: Scalar>(policy: &SoftmaxPolicy<T>) -> Array2<T> {
    let actions: Vec<usize> = (0..policy.num_states()).map(|s| policy.greedy(s)).collect();
    crate::oracle::deterministic_policy(&actions, policy.num_actions())
}
