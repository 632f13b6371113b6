//! Gradient estimators for the model and the policy, the optimism schedule
//! α(t), the critic regression and a first-order optimizer.
//!
//! Every function here returns an *ascent* direction: the gradient of the
//! objective being maximized (RBMLE objective, negated optimistic loss,
//! policy return).

use ndarray::{s, Array, Array2, Dimension};
use serde::{Deserialize, Serialize};

use crate::categorical::{self, add_entropy_gradient, add_score};
use crate::error::{Error, Result};
use crate::imagination::{Critic, ImaginedBatch, SoftmaxPolicy};
use crate::mdp::Transition;
use crate::scalar::Scalar;
use crate::world_model::{add_log_likelihood_gradient, GradientTensor, RowCache, SoftmaxDynamicsModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Constant,
    InverseSqrt,
    InverseLog,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Constant => "constant",
            ScheduleKind::InverseSqrt => "inverse_sqrt",
            ScheduleKind::InverseLog => "inverse_log",
        }
    }
}

/// Optimism coefficient as a function of the environment-step count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaSchedule {
    #[serde(default)]
    pub kind: ScheduleKind,
    pub base_alpha: f64,
}

impl AlphaSchedule {
    pub fn constant(base_alpha: f64) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            base_alpha,
        }
    }

    pub fn value<T: Scalar>(&self, t: u64) -> T {
        let t = t as f64;
        let v = match self.kind {
            ScheduleKind::Constant => self.base_alpha,
            ScheduleKind::InverseSqrt => self.base_alpha / t.max(1.0).sqrt(),
            ScheduleKind::InverseLog => self.base_alpha / t.max(std::f64::consts::E).ln(),
        };
        T::lit(v)
    }

    pub fn is_zero(&self) -> bool {
        self.base_alpha == 0.0
    }
}

/// Raw RBMLE model gradient:
/// `α/N Σ_i R(τ_i) Σ_h ∇ log p(s_{h+1}|s_h,a_h) + 1/t Σ_{D} ∇ log p(s'|s,a)`,
/// with `R(τ)` the undiscounted imagined return.
///
/// An empty `buffer` makes the likelihood term zero.
pub fn rbmle_model_gradient<T: Scalar>(
    dynamics: &SoftmaxDynamicsModel<T>,
    batch: &ImaginedBatch<T>,
    buffer: &[Transition<T>],
    alpha: T,
    t: u64,
) -> Result<GradientTensor<T>> {
    if t == 0 {
        return Err(Error::usage("rbmle_model_gradient needs t >= 1"));
    }
    let mut grad = dynamics.zero_gradient();
    if !batch.trajectories.is_empty() && alpha != T::zero() {
        let mut cache = RowCache::new(dynamics.num_states(), dynamics.num_actions());
        let per_traj = alpha / T::from_count(batch.n_traj());
        for traj in &batch.trajectories {
            let weight = per_traj * traj.total_reward();
            for (s, a, s_next) in traj.steps() {
                let p = cache.get(dynamics.logits(), s, a);
                SoftmaxDynamicsModel::accumulate_score(&mut grad, p.view(), (s, a, s_next), weight);
            }
        }
    }
    if !buffer.is_empty() {
        add_log_likelihood_gradient(dynamics, buffer, T::one() / T::lit(t as f64), &mut grad)?;
    }
    Ok(grad)
}

/// Frozen-trajectory surrogate whose gradient is [`rbmle_model_gradient`].
pub fn rbmle_surrogate<T: Scalar>(
    dynamics: &SoftmaxDynamicsModel<T>,
    batch: &ImaginedBatch<T>,
    buffer: &[Transition<T>],
    alpha: T,
    t: u64,
) -> Result<T> {
    let mut total = T::zero();
    if !batch.trajectories.is_empty() {
        let per_traj = alpha / T::from_count(batch.n_traj());
        for traj in &batch.trajectories {
            let mut lp = T::zero();
            for (s, a, s_next) in traj.steps() {
                lp += dynamics.log_prob(s, a, s_next)?;
            }
            total += per_traj * traj.total_reward() * lp;
        }
    }
    let inv_t = T::one() / T::lit(t as f64);
    for tr in buffer {
        total += inv_t * dynamics.log_prob(tr.s, tr.a, tr.s_next)?;
    }
    Ok(total)
}

fn require_advantages<T: Scalar>(batch: &ImaginedBatch<T>) -> Result<()> {
    if batch.trajectories.iter().any(|t| t.advantages.len() != t.len()) {
        return Err(Error::usage("batch has no advantages"));
    }
    Ok(())
}

/// Ascent direction of the optimistic dynamics objective (−L_opt):
/// `(1/N) Σ_i Σ_ℓ [α A_ℓ ∇ log p(s_{ℓ+1}|s_ℓ,a_ℓ) + η ∇ H(p(·|s_ℓ,a_ℓ))]`.
///
/// Advantages are constants: nothing flows into the critic or the normalizer.
/// The entropy term only touches `(s, a)` rows visited by the batch.
pub fn optimistic_dynamics_gradient<T: Scalar>(
    dynamics: &SoftmaxDynamicsModel<T>,
    batch: &ImaginedBatch<T>,
    alpha: T,
    eta: T,
) -> Result<GradientTensor<T>> {
    let mut grad = dynamics.zero_gradient();
    add_optimistic_dynamics_gradient(dynamics, batch, alpha, eta, &mut grad)?;
    Ok(grad)
}

pub(crate) fn add_optimistic_dynamics_gradient<T: Scalar>(
    dynamics: &SoftmaxDynamicsModel<T>,
    batch: &ImaginedBatch<T>,
    alpha: T,
    eta: T,
    grad: &mut GradientTensor<T>,
) -> Result<()> {
    if alpha < T::zero() || eta < T::zero() {
        return Err(Error::usage("alpha and eta must be nonnegative"));
    }
    require_advantages(batch)?;
    if batch.trajectories.is_empty() {
        return Ok(());
    }
    let inv_n = T::one() / T::from_count(batch.n_traj());
    let mut cache = RowCache::new(dynamics.num_states(), dynamics.num_actions());
    for traj in &batch.trajectories {
        for (l, (s, a, s_next)) in traj.steps().enumerate() {
            let p = cache.get(dynamics.logits(), s, a);
            let mut row = grad.slice_mut(s![s, a, ..]);
            add_score(row.view_mut(), p.view(), s_next, alpha * traj.advantages[l] * inv_n);
            if eta != T::zero() {
                add_entropy_gradient(row, p.view(), eta * inv_n);
            }
        }
    }
    Ok(())
}

/// Value of L_opt on a frozen batch; the negative of the surrogate ascended
/// by [`optimistic_dynamics_gradient`].
pub fn optimistic_loss<T: Scalar>(dynamics: &SoftmaxDynamicsModel<T>, batch: &ImaginedBatch<T>, alpha: T, eta: T) -> Result<(T, T)> {
    require_advantages(batch)?;
    let inv_n = T::one() / T::from_count(batch.n_traj().max(1));
    let mut optimism_term = T::zero();
    let mut entropy_sum = T::zero();
    for traj in &batch.trajectories {
        for (l, (s, a, s_next)) in traj.steps().enumerate() {
            optimism_term -= alpha * traj.advantages[l] * dynamics.log_prob(s, a, s_next)? * inv_n;
            entropy_sum += categorical::entropy(dynamics.prob_row(s, a).view()) * inv_n;
        }
    }
    Ok((optimism_term - eta * entropy_sum, entropy_sum))
}

/// Policy ascent direction
/// `(1/N) Σ_i Σ_ℓ [A_ℓ ∇ log π(a_ℓ|s_ℓ) + c ∇ H(π(·|s_ℓ))]`.
pub fn policy_gradient<T: Scalar>(policy: &SoftmaxPolicy<T>, batch: &ImaginedBatch<T>, entropy_coeff: T) -> Result<Array2<T>> {
    require_advantages(batch)?;
    let mut grad = Array2::zeros(policy.logits().dim());
    if batch.trajectories.is_empty() {
        return Ok(grad);
    }
    let inv_n = T::one() / T::from_count(batch.n_traj());
    let mut rows: Vec<Option<ndarray::Array1<T>>> = vec![None; policy.num_states()];
    for traj in &batch.trajectories {
        for l in 0..traj.len() {
            let (s, a) = (traj.states[l], traj.actions[l]);
            let pi = rows[s].get_or_insert_with(|| policy.probs(s));
            let mut row = grad.row_mut(s);
            add_score(row.view_mut(), pi.view(), a, traj.advantages[l] * inv_n);
            if entropy_coeff != T::zero() {
                add_entropy_gradient(row, pi.view(), entropy_coeff * inv_n);
            }
        }
    }
    Ok(grad)
}

/// Surrogate whose gradient is [`policy_gradient`] on a frozen batch.
pub fn policy_surrogate<T: Scalar>(policy: &SoftmaxPolicy<T>, batch: &ImaginedBatch<T>, entropy_coeff: T) -> T {
    let inv_n = T::one() / T::from_count(batch.n_traj().max(1));
    let mut total = T::zero();
    for traj in &batch.trajectories {
        for l in 0..traj.len() {
            let (s, a) = (traj.states[l], traj.actions[l]);
            total += traj.advantages[l] * categorical::log_softmax_at(policy.logits().row(s), a) * inv_n;
            total += entropy_coeff * categorical::entropy(policy.probs(s).view()) * inv_n;
        }
    }
    total
}

/// Moves each visited state's value toward the mean λ-return observed for it:
/// `V(s) ← V(s) + lr · mean_{ℓ: s_ℓ = s}(G^λ_ℓ − V(s))`.
///
/// Returns the mean squared residual before the update.
pub fn critic_update<T: Scalar>(critic: &mut Critic<T>, batch: &ImaginedBatch<T>, lr: T) -> T {
    let ns = critic.values.len();
    let mut sum = vec![T::zero(); ns];
    let mut count = vec![0usize; ns];
    let mut sq = T::zero();
    let mut n = 0usize;
    for traj in &batch.trajectories {
        for (l, &g) in traj.lambda_returns.iter().enumerate() {
            let s = traj.states[l];
            let residual = g - critic.values[s];
            sum[s] += residual;
            count[s] += 1;
            sq += residual * residual;
            n += 1;
        }
    }
    for s in 0..ns {
        if count[s] > 0 {
            critic.values[s] += lr * sum[s] / T::from_count(count[s]);
        }
    }
    if n == 0 {
        T::zero()
    } else {
        sq / T::from_count(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascent,
    Descent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    /// `θ ← θ ± lr · g`
    Plain,
    /// Adaptive moments with bias correction.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimizer state for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T, D: Dimension> {
    pub lr: T,
    pub kind: OptimizerKind,
    first: Array<T, D>,
    second: Array<T, D>,
    steps: u64,
}

impl<T: Scalar, D: Dimension> OptimizerState<T, D> {
    pub fn new(kind: OptimizerKind, lr: T, shape: D) -> Self {
        Self {
            lr,
            kind,
            first: Array::zeros(shape.clone()),
            second: Array::zeros(shape),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn apply(&mut self, params: &mut Array<T, D>, grad: &Array<T, D>, direction: Direction) -> Result<()> {
        if params.shape() != grad.shape() || params.shape() != self.first.shape() {
            return Err(Error::usage(format!(
                "shape mismatch: params {:?}, gradient {:?}, optimizer {:?}",
                params.shape(),
                grad.shape(),
                self.first.shape()
            )));
        }
        self.steps += 1;
        let sign = match direction {
            Direction::Ascent => T::one(),
            Direction::Descent => -T::one(),
        };
        match self.kind {
            OptimizerKind::Plain => {
                params.scaled_add(sign * self.lr, grad);
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(eps));
                let k = self.steps as i32;
                let c1 = T::one() - b1.powi(k);
                let c2 = T::one() - b2.powi(k);
                let step = sign * self.lr;
                ndarray::Zip::from(params)
                    .and(grad)
                    .and(&mut self.first)
                    .and(&mut self.second)
                    .for_each(|p, &g, m, v| {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *p += step * m_hat / (v_hat.sqrt() + eps);
                    });
            }
        }
        Ok(())
    }
}

/// Per-step diagnostics from the training loop.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport<T> {
    pub optimism_term: T,
    pub nll_term: T,
    pub model_entropy: T,
    pub policy_entropy: T,
    pub critic_loss: T,
    pub alpha_used: T,
    pub scale_used: T,
}
