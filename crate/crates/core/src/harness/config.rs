//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{AgentConfig, AgentKind};
use crate::error::{Error, Result};
use crate::losses::ScheduleKind;
use crate::mdp::{self, TabularMdp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Riverswim { n_states: usize },
    SparseChain {
        n_states: usize,
        #[serde(default = "one")]
        goal_reward: f64,
    },
    /// The true model of the identification trap.
    Trap,
}

fn one() -> f64 {
    1.0
}

impl EnvSpec {
    pub fn build(&self) -> Result<TabularMdp<f64>> {
        let wrap = |e: Error| match e {
            Error::Usage(m) => Error::config("env", m),
            other => other,
        };
        match *self {
            EnvSpec::Riverswim { n_states } => mdp::make_riverswim(n_states).map_err(wrap),
            EnvSpec::SparseChain { n_states, goal_reward } => mdp::make_sparse_chain(n_states, goal_reward).map_err(wrap),
            EnvSpec::Trap => Ok(mdp::make_two_model_trap().0),
        }
    }
}

/// Lists of values to take the cartesian product over. Absent axes keep the
/// base agent setting.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    pub agent_kind: Option<Vec<AgentKind>>,
    pub alpha: Option<Vec<f64>>,
    pub eta: Option<Vec<f64>>,
    pub schedule: Option<Vec<ScheduleKind>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub env: EnvSpec,
    #[serde(default)]
    pub agent: AgentConfig,
    pub budget: u64,
    pub checkpoint_every: u64,
    #[serde(default = "default_seeds")]
    pub n_seeds: u64,
    /// Seeds run are `first_seed .. first_seed + n_seeds`.
    #[serde(default)]
    pub first_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub sweep: Option<SweepAxes>,
}

fn default_seeds() -> u64 {
    1
}

/// One point of a sweep: a fully resolved agent configuration (seed unset).
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub agent: AgentConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let field = e.span().map(|sp| text[sp].lines().next().unwrap_or("").trim().to_string()).unwrap_or_default();
            Error::config(if field.is_empty() { "<file>".to_string() } else { field }, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::config("name", "must be nonempty"));
        }
        if self.n_seeds == 0 {
            return Err(Error::config("n_seeds", "must be at least 1"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config("checkpoint_every", "must be a positive integer"));
        }
        if self.budget < self.checkpoint_every {
            return Err(Error::config("budget", "must be at least checkpoint_every"));
        }
        self.env.build()?;
        self.agent.validate().map_err(|e| match e {
            Error::Config { field, message } => Error::config(format!("agent.{field}"), message),
            other => other,
        })?;
        if let Some(sweep) = &self.sweep {
            let axes = [
                ("sweep.agent_kind", sweep.agent_kind.as_ref().map(Vec::len)),
                ("sweep.alpha", sweep.alpha.as_ref().map(Vec::len)),
                ("sweep.eta", sweep.eta.as_ref().map(Vec::len)),
                ("sweep.schedule", sweep.schedule.as_ref().map(Vec::len)),
            ];
            if axes.iter().all(|(_, len)| len.is_none()) {
                return Err(Error::config("sweep", "lists no axis"));
            }
            for (field, len) in axes {
                if len == Some(0) {
                    return Err(Error::config(field, "must be nonempty"));
                }
            }
            for v in self.variants() {
                v.agent.validate().map_err(|e| match e {
                    Error::Config { field, message } => Error::config(format!("sweep ({}) {field}", v.name), message),
                    other => other,
                })?;
            }
        }
        Ok(())
    }

    /// Expands the sweep; without one, a single variant named after the agent kind.
    pub fn variants(&self) -> Vec<Variant> {
        let Some(sweep) = &self.sweep else {
            return vec![Variant {
                name: self.agent.agent_kind.name().to_string(),
                agent: self.agent.clone(),
            }];
        };
        let base = &self.agent;
        let kinds: Vec<Option<AgentKind>> = sweep.agent_kind.as_ref().map_or(vec![None], |v| v.iter().copied().map(Some).collect());
        let alphas: Vec<Option<f64>> = sweep.alpha.as_ref().map_or(vec![None], |v| v.iter().copied().map(Some).collect());
        let etas: Vec<Option<f64>> = sweep.eta.as_ref().map_or(vec![None], |v| v.iter().copied().map(Some).collect());
        let schedules: Vec<Option<ScheduleKind>> = sweep.schedule.as_ref().map_or(vec![None], |v| v.iter().copied().map(Some).collect());
        let mut out = Vec::new();
        for kind in &kinds {
            for alpha in &alphas {
                for eta in &etas {
                    for schedule in &schedules {
                        let mut agent = base.clone();
                        let mut parts = Vec::new();
                        if let Some(k) = kind {
                            agent.agent_kind = *k;
                            parts.push(k.name().to_string());
                        }
                        if let Some(a) = alpha {
                            agent.alpha_schedule.base_alpha = *a;
                            parts.push(format!("alpha={a:e}"));
                        }
                        if let Some(e) = eta {
                            agent.eta = *e;
                            parts.push(format!("eta={e:e}"));
                        }
                        if let Some(s) = schedule {
                            agent.alpha_schedule.kind = *s;
                            parts.push(format!("schedule={}", s.name()));
                        }
                        out.push(Variant { name: parts.join("_"), agent });
                    }
                }
            }
        }
        out
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> {
        self.first_seed..self.first_seed + self.n_seeds
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
name = "chain"
budget = 2000
checkpoint_every = 500
n_seeds = 2

[env]
name = "sparse_chain"
n_states = 8

[agent]
agent_kind = "owm"
eta = 0.0003

[agent.alpha_schedule]
kind = "constant"
base_alpha = 0.0001
"#;

    fn field_of(r: Result<ExperimentConfig>) -> String {
        match r {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected a configuration error, got {other:?}"),
        }
    }

    #[test]
    fn parses_and_defaults() {
        let cfg = ExperimentConfig::from_toml_str(BASE).unwrap();
        assert_eq!(cfg.env, EnvSpec::SparseChain { n_states: 8, goal_reward: 1.0 });
        assert_eq!(cfg.agent.gamma, 0.95);
        assert_eq!(cfg.seeds().collect::<Vec<_>>(), vec![0, 1]);
        let v = cfg.variants();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].name, "owm");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = BASE.replace("eta = 0.0003", "eta = 0.0003\netta = 1.0");
        assert!(field_of(ExperimentConfig::from_toml_str(&text)).contains("etta"));
        let text = BASE.replace("n_seeds = 2", "n_seeds = 2\nseedz = 3");
        assert!(field_of(ExperimentConfig::from_toml_str(&text)).contains("seedz"));
        let text = BASE.replace("n_states = 8", "n_states = 8\nwidth = 3");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Config { .. })));
    }

    #[test]
    fn invalid_values_name_the_field() {
        assert_eq!(field_of(ExperimentConfig::from_toml_str(&BASE.replace("n_seeds = 2", "n_seeds = 0"))), "n_seeds");
        assert_eq!(field_of(ExperimentConfig::from_toml_str(&BASE.replace("budget = 2000", "budget = 100"))), "budget");
        assert_eq!(field_of(ExperimentConfig::from_toml_str(&BASE.replace("n_states = 8", "n_states = 2"))), "env");
        let text = format!("{BASE}\n[sweep]\nalpha = []\n");
        assert_eq!(field_of(ExperimentConfig::from_toml_str(&text)), "sweep.alpha");
        let text = format!("{BASE}\n[sweep]\n");
        assert_eq!(field_of(ExperimentConfig::from_toml_str(&text)), "sweep");
        let text = format!("{BASE}\n[sweep]\neta = [-1.0]\n");
        assert!(field_of(ExperimentConfig::from_toml_str(&text)).ends_with("eta"));
    }

    #[test]
    fn sweep_expands_cartesian_product() {
        let text = format!("{BASE}\n[sweep]\nalpha = [0.0, 0.0001]\nschedule = [\"constant\", \"inverse_sqrt\", \"inverse_log\"]\n");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        let v = cfg.variants();
        assert_eq!(v.len(), 6);
        assert_eq!(v[0].name, "alpha=0e0_schedule=constant");
        assert_eq!(v[5].agent.alpha_schedule.base_alpha, 1e-4);
        assert_eq!(v[5].agent.alpha_schedule.kind, ScheduleKind::InverseLog);
        let names: std::collections::BTreeSet<_> = v.iter().map(|x| x.name.clone()).collect();
        assert_eq!(names.len(), 6);
    }

    #[test]
    fn every_env_builds() {
        for text in ["name = \"riverswim\"\nn_states = 6", "name = \"sparse_chain\"\nn_states = 5\ngoal_reward = 2.0", "name = \"trap\""] {
            let spec: EnvSpec = toml::from_str(text).unwrap();
            spec.build().unwrap();
        }
    }
}
