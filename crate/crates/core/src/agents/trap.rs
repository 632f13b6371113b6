//! Two-hypothesis model selection on the identification trap.
//!
//! The agent knows the model class `{true, decoy}` exactly. Before every
//! step it picks a hypothesis by score and plays that hypothesis' optimal
//! policy in the real (true) environment:
//!
//! * certainty equivalence: mean log-likelihood of the data so far;
//! * reward-biased: `α J*(p) + (1/t) Σ log p(data)`.
//!
//! Ties keep the incumbent, so a likelihood-only selector that starts at the
//! decoy and only ever plays STAY never sees evidence against it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{make_two_model_trap, trap, TabularMdp, Transition};
use crate::oracle::value_iteration;
use crate::rng::{seeded, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    True,
    Decoy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum SelectionRule {
    CertaintyEquivalence,
    RewardBiased { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapConfig {
    pub rule: SelectionRule,
    pub steps: u64,
    pub seed: u64,
    pub initial: Hypothesis,
    /// Probability of a uniformly random action.
    pub epsilon: f64,
}

impl TrapConfig {
    pub fn new(rule: SelectionRule, seed: u64) -> Self {
        Self {
            rule,
            steps: 5000,
            seed,
            initial: Hypothesis::Decoy,
            epsilon: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapOutcome {
    pub final_choice: Hypothesis,
    /// First step at which GO was played.
    pub switch_step: Option<u64>,
    /// Step from which the true hypothesis was selected through the end.
    pub identified_step: Option<u64>,
    pub go_count: u64,
    pub stay_count: u64,
    pub total_reward: f64,
}

struct Candidate {
    mdp: TabularMdp<f64>,
    j_star: f64,
    policy: Vec<usize>,
    log_lik: f64,
}

impl Candidate {
    fn new(mdp: TabularMdp<f64>) -> Result<Self> {
        let sol = value_iteration(&mdp, trap::DISCOUNT, 1e-12)?;
        Ok(Self {
            mdp,
            j_star: sol.j_star,
            policy: sol.optimal_policy,
            log_lik: 0.0,
        })
    }
}

pub fn run_trap(cfg: &TrapConfig) -> Result<TrapOutcome> {
    if !(0.0..=1.0).contains(&cfg.epsilon) {
        return Err(Error::config("epsilon", "must lie in [0, 1]"));
    }
    if let SelectionRule::RewardBiased { alpha } = cfg.rule {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::config("alpha", "must be a finite nonnegative number"));
        }
    }
    let (truth, decoy) = make_two_model_trap::<f64>();
    let env = truth.clone();
    let mut cands = [Candidate::new(truth)?, Candidate::new(decoy)?];
    let index = |h: Hypothesis| if h == Hypothesis::True { 0 } else { 1 };
    let mut current = cfg.initial;
    let mut rng = seeded(cfg.seed, streams::TRAIN);

    let mut s = env.sample_initial(&mut rng);
    let mut episode_step = 0usize;
    let mut out = TrapOutcome {
        final_choice: current,
        switch_step: None,
        identified_step: None,
        go_count: 0,
        stay_count: 0,
        total_reward: 0.0,
    };
    for t in 1..=cfg.steps {
        let data_len = t - 1;
        let score = |c: &Candidate| -> f64 {
            let fit = if data_len == 0 { 0.0 } else { c.log_lik / data_len as f64 };
            match cfg.rule {
                SelectionRule::CertaintyEquivalence => fit,
                SelectionRule::RewardBiased { alpha } => alpha * c.j_star + fit,
            }
        };
        let (inc, other) = (index(current), 1 - index(current));
        if score(&cands[other]) > score(&cands[inc]) {
            current = if other == 0 { Hypothesis::True } else { Hypothesis::Decoy };
        }
        match (current, out.identified_step) {
            (Hypothesis::True, None) => out.identified_step = Some(t),
            (Hypothesis::Decoy, Some(_)) => out.identified_step = None,
            _ => {}
        }

        let u: f64 = rng.gen();
        let a = if u < cfg.epsilon {
            rng.gen_range(0..env.num_actions())
        } else {
            cands[index(current)].policy[s]
        };
        let (s_next, r) = env.step(s, a, &mut rng)?;
        let tr = Transition { s, a, r, s_next, t };
        for c in &mut cands {
            c.log_lik += c.mdp.log_likelihood(std::slice::from_ref(&tr));
        }
        out.total_reward += r;
        if a == trap::GO && s == 0 {
            out.go_count += 1;
            out.switch_step.get_or_insert(t);
        } else if a == trap::STAY && s == 0 {
            out.stay_count += 1;
        }
        s = s_next;
        episode_step += 1;
        if episode_step == env.episode_length() {
            s = env.sample_initial(&mut rng);
            episode_step = 0;
        }
    }
    out.final_choice = current;
    Ok(out)
}
