//! Finite MDPs, the environments used by the experiments, and real-environment
//! interaction.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, Array3, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::sample_categorical;
use crate::scalar::Scalar;

/// How returns are accumulated for an MDP instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective<T> {
    /// Undiscounted sum over `T` steps.
    Horizon(usize),
    /// Infinite-horizon discounted return with factor in (0, 1).
    Discounted(T),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp<T> {
    num_states: usize,
    num_actions: usize,
    /// `[s][a][s']`
    transitions: Array3<T>,
    /// `[s][a]`
    rewards: Array2<T>,
    initial_dist: Array1<T>,
    objective: Objective<T>,
}

fn check_simplex<T: Scalar>(row: ArrayView1<'_, T>, what: impl Fn() -> String) -> Result<()> {
    let tol = T::simplex_tolerance();
    let mut total = T::zero();
    for &p in row {
        if !(p >= T::zero() && p <= T::one()) {
            return Err(Error::InvalidModel(format!("{}: probability {} outside [0,1]", what(), p)));
        }
        total += p;
    }
    if (total - T::one()).abs() > tol {
        return Err(Error::InvalidModel(format!("{}: sums to {}", what(), total)));
    }
    Ok(())
}

impl<T: Scalar> TabularMdp<T> {
    pub fn new(
        transitions: Array3<T>,
        rewards: Array2<T>,
        initial_dist: Array1<T>,
        objective: Objective<T>,
    ) -> Result<Self> {
        let (ns, na, ns2) = transitions.dim();
        if ns == 0 || na == 0 {
            return Err(Error::InvalidModel("empty state or action space".into()));
        }
        if ns2 != ns {
            return Err(Error::InvalidModel(format!("transition tensor shape {:?} is not [S][A][S]", transitions.dim())));
        }
        if rewards.dim() != (ns, na) {
            return Err(Error::InvalidModel(format!("reward shape {:?} != ({ns}, {na})", rewards.dim())));
        }
        if initial_dist.len() != ns {
            return Err(Error::InvalidModel("initial distribution length mismatch".into()));
        }
        for s in 0..ns {
            for a in 0..na {
                check_simplex(transitions.slice(ndarray::s![s, a, ..]), || format!("transitions[{s}][{a}]"))?;
            }
        }
        check_simplex(initial_dist.view(), || "initial_dist".to_string())?;
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidModel("non-finite reward".into()));
        }
        match objective {
            Objective::Horizon(0) => return Err(Error::InvalidModel("horizon must be positive".into())),
            Objective::Discounted(g) if !(g > T::zero() && g < T::one()) => {
                return Err(Error::InvalidModel(format!("discount {g} outside (0,1)")))
            }
            _ => {}
        }
        Ok(Self {
            num_states: ns,
            num_actions: na,
            transitions,
            rewards,
            initial_dist,
            objective,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn transitions(&self) -> &Array3<T> {
        &self.transitions
    }

    pub fn rewards(&self) -> &Array2<T> {
        &self.rewards
    }

    pub fn initial_dist(&self) -> &Array1<T> {
        &self.initial_dist
    }

    pub fn objective(&self) -> Objective<T> {
        self.objective
    }

    /// Same dynamics and rewards, different return objective.
    pub fn with_objective(self, objective: Objective<T>) -> Result<Self> {
        Self::new(self.transitions, self.rewards, self.initial_dist, objective)
    }

    /// Replaces the transition tensor, keeping rewards, start distribution and objective.
    pub fn with_transitions(&self, transitions: Array3<T>) -> Result<Self> {
        Self::new(transitions, self.rewards.clone(), self.initial_dist.clone(), self.objective)
    }

    /// Episode length used for interaction and evaluation.
    ///
    /// For discounted instances this is the effective horizon `ceil(1/(1-γ))`.
    pub fn episode_length(&self) -> usize {
        match self.objective {
            Objective::Horizon(h) => h,
            Objective::Discounted(g) => (1.0 / (1.0 - g.as_f64())).ceil() as usize,
        }
    }

    pub fn transition_row(&self, s: usize, a: usize) -> ArrayView1<'_, T> {
        self.transitions.slice(ndarray::s![s, a, ..])
    }

    fn check_indices(&self, s: usize, a: usize) -> Result<()> {
        if s >= self.num_states {
            return Err(Error::usage(format!("state {s} out of bounds ({} states)", self.num_states)));
        }
        if a >= self.num_actions {
            return Err(Error::usage(format!("action {a} out of bounds ({} actions)", self.num_actions)));
        }
        Ok(())
    }

    /// Samples one real transition. Consumes exactly one uniform draw.
    pub fn step<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> Result<(usize, T)> {
        self.check_indices(s, a)?;
        let next = sample_categorical(self.transition_row(s, a), rng);
        Ok((next, self.rewards[[s, a]]))
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(self.initial_dist.view(), rng)
    }

    /// Log-likelihood of a sequence of transitions under this model's dynamics.
    pub fn log_likelihood(&self, data: &[Transition<T>]) -> T {
        data.iter()
            .map(|tr| self.transitions[[tr.s, tr.a, tr.s_next]].ln())
            .fold(T::zero(), |acc, x| acc + x)
    }
}

pub mod riverswim {
    pub const LEFT: usize = 0;
    pub const RIGHT: usize = 1;
    pub const LEFT_REWARD: f64 = 0.005;
    pub const RIGHT_REWARD: f64 = 1.0;
    pub const P_FORWARD: f64 = 0.3;
    pub const P_STAY: f64 = 0.6;
    pub const P_SLIP: f64 = 0.1;
    pub const DISCOUNT: f64 = 0.95;
}

/// RiverSwim with `n_states` states, starting in state 0.
///
/// LEFT moves one state left deterministically (self-loop at state 0, where
/// it pays 0.005). RIGHT moves right w.p. 0.3, stays w.p. 0.6 and slips left
/// w.p. 0.1; at state 0 the slip mass stays put, and at the rightmost state
/// RIGHT stays w.p. 0.9 (paying 1.0) and slips w.p. 0.1. The objective is
/// discounted with γ = 0.95.
pub fn make_riverswim<T: Scalar>(n_states: usize) -> Result<TabularMdp<T>> {
    use riverswim::*;
    if n_states < 3 {
        return Err(Error::usage(format!("RiverSwim needs at least 3 states, got {n_states}")));
    }
    let n = n_states;
    let mut p = Array3::<T>::zeros((n, 2, n));
    let mut r = Array2::<T>::zeros((n, 2));
    for s in 0..n {
        p[[s, LEFT, s.saturating_sub(1)]] = T::one();
        if s == 0 {
            p[[s, RIGHT, 1]] = T::lit(P_FORWARD);
            p[[s, RIGHT, 0]] = T::lit(P_STAY + P_SLIP);
        } else if s == n - 1 {
            p[[s, RIGHT, s]] = T::lit(P_FORWARD + P_STAY);
            p[[s, RIGHT, s - 1]] = T::lit(P_SLIP);
        } else {
            p[[s, RIGHT, s + 1]] = T::lit(P_FORWARD);
            p[[s, RIGHT, s]] = T::lit(P_STAY);
            p[[s, RIGHT, s - 1]] = T::lit(P_SLIP);
        }
    }
    r[[0, LEFT]] = T::lit(LEFT_REWARD);
    r[[n - 1, RIGHT]] = T::lit(RIGHT_REWARD);
    let mut mu = Array1::<T>::zeros(n);
    mu[0] = T::one();
    TabularMdp::new(p, r, mu, Objective::Discounted(T::lit(DISCOUNT)))
}

pub mod trap {
    pub const STAY: usize = 0;
    pub const GO: usize = 1;
    pub const STAY_REWARD: f64 = 0.3;
    pub const GOAL_REWARD: f64 = 1.0;
    pub const TRUE_GO_SUCCESS: f64 = 0.9;
    pub const DECOY_GO_SUCCESS: f64 = 0.1;
    pub const DISCOUNT: f64 = 0.95;
}

fn trap_model<T: Scalar>(go_success: f64) -> Result<TabularMdp<T>> {
    use trap::*;
    let mut p = Array3::<T>::zeros((2, 2, 2));
    p[[0, STAY, 0]] = T::one();
    p[[0, GO, 1]] = T::lit(go_success);
    p[[0, GO, 0]] = T::one() - T::lit(go_success);
    p[[1, STAY, 0]] = T::one();
    p[[1, GO, 0]] = T::one();
    let mut r = Array2::<T>::zeros((2, 2));
    r[[0, STAY]] = T::lit(STAY_REWARD);
    r[[1, STAY]] = T::lit(GOAL_REWARD);
    r[[1, GO]] = T::lit(GOAL_REWARD);
    let mut mu = Array1::<T>::zeros(2);
    mu[0] = T::one();
    TabularMdp::new(p, r, mu, Objective::Discounted(T::lit(DISCOUNT)))
}

/// Returns `(true_model, decoy)`: two 2-state MDPs that agree whenever the
/// agent only plays STAY, and disagree on how often GO reaches the rewarding
/// state 1 (0.9 under the true model, 0.1 under the decoy).
///
/// GO is optimal under the true model and STAY under the decoy (γ = 0.95).
pub fn make_two_model_trap<T: Scalar>() -> (TabularMdp<T>, TabularMdp<T>) {
    let truth = trap_model(trap::TRUE_GO_SUCCESS).expect("trap model is valid");
    let decoy = trap_model(trap::DECOY_GO_SUCCESS).expect("trap model is valid");
    (truth, decoy)
}

pub mod chain {
    pub const BACK: usize = 0;
    pub const FORWARD: usize = 1;
}

/// Deterministic chain of `n_states` states starting at state 0.
///
/// FORWARD advances one state, BACK moves one state back (self-loop at 0).
/// The last state is absorbing. The only reward is `goal_reward`, paid for
/// FORWARD from state `n_states - 2`, i.e. on entering the absorbing state.
/// Episodes last `2 * n_states` steps.
pub fn make_sparse_chain<T: Scalar>(n_states: usize, goal_reward: T) -> Result<TabularMdp<T>> {
    use chain::*;
    if n_states < 4 {
        return Err(Error::usage(format!("sparse chain needs at least 4 states, got {n_states}")));
    }
    let n = n_states;
    let mut p = Array3::<T>::zeros((n, 2, n));
    for s in 0..n - 1 {
        p[[s, BACK, s.saturating_sub(1)]] = T::one();
        p[[s, FORWARD, s + 1]] = T::one();
    }
    p[[n - 1, BACK, n - 1]] = T::one();
    p[[n - 1, FORWARD, n - 1]] = T::one();
    let mut r = Array2::<T>::zeros((n, 2));
    r[[n - 2, FORWARD]] = goal_reward;
    let mut mu = Array1::<T>::zeros(n);
    mu[0] = T::one();
    TabularMdp::new(p, r, mu, Objective::Horizon(2 * n))
}

/// One real environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<T> {
    pub s: usize,
    pub a: usize,
    pub r: T,
    pub s_next: usize,
    /// Environment step counter.
    pub t: u64,
}

/// FIFO replay buffer; the oldest entry is evicted once `capacity` is reached.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    entries: VecDeque<Transition<T>>,
    capacity: Option<usize>,
}

impl<T: Scalar> ReplayBuffer<T> {
    pub fn unbounded() -> Self {
        Self {
            entries: VecDeque::new(),
            capacity: None,
        }
    }

    pub fn with_capacity(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::usage("replay buffer capacity must be positive"));
        }
        Ok(Self {
            entries: VecDeque::with_capacity(capacity),
            capacity: Some(capacity),
        })
    }

    pub fn push(&mut self, tr: Transition<T>) {
        if let Some(cap) = self.capacity {
            if self.entries.len() == cap {
                self.entries.pop_front();
            }
        }
        self.entries.push_back(tr);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &Transition<T>> + ExactSizeIterator {
        self.entries.iter()
    }

    pub fn to_vec(&self) -> Vec<Transition<T>> {
        self.entries.iter().copied().collect()
    }

    /// States visited by the last `window` transitions, oldest first.
    pub fn recent_states(&self, window: usize) -> Vec<usize> {
        let skip = self.entries.len().saturating_sub(window);
        self.entries.iter().skip(skip).map(|tr| tr.s).collect()
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Transition<T>> {
        if self.entries.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| self.entries[rng.gen_range(0..self.entries.len())])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::array;

    fn assert_rows_stochastic(m: &TabularMdp<f64>) {
        for s in 0..m.num_states() {
            for a in 0..m.num_actions() {
                let row = m.transition_row(s, a);
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&p| p >= 0.0));
            }
        }
    }

    #[test]
    fn deterministic_row_step() {
        let mut p = Array3::<f64>::zeros((3, 2, 3));
        for s in 0..3 {
            p[[s, 0, s]] = 1.0;
            p[[s, 1, 2]] = 1.0;
        }
        let r = array![[0.0, 0.7], [0.0, 0.0], [0.0, 0.0]];
        let m = TabularMdp::new(p, r, array![1.0, 0.0, 0.0], Objective::Horizon(5)).unwrap();
        let mut rng = seeded(0, 0);
        assert_eq!(m.step(0, 1, &mut rng).unwrap(), (2, 0.7));
    }

    #[test]
    fn uniform_row_frequencies() {
        let p = Array3::<f64>::from_elem((4, 1, 4), 0.25);
        let m = TabularMdp::new(p, Array2::zeros((4, 1)), array![1.0, 0.0, 0.0, 0.0], Objective::Horizon(1)).unwrap();
        let mut rng = seeded(11, 0);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[m.step(0, 0, &mut rng).unwrap().0] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn out_of_bounds_is_usage_error() {
        let m: TabularMdp<f64> = make_riverswim(6).unwrap();
        let mut rng = seeded(0, 0);
        assert!(matches!(m.step(6, 0, &mut rng), Err(Error::Usage(_))));
        assert!(matches!(m.step(0, 2, &mut rng), Err(Error::Usage(_))));
    }

    #[test]
    fn riverswim_left_at_origin_self_loops() {
        let m: TabularMdp<f64> = make_riverswim(6).unwrap();
        let mut rng = seeded(5, 0);
        for _ in 0..200 {
            assert_eq!(m.step(0, riverswim::LEFT, &mut rng).unwrap(), (0, riverswim::LEFT_REWARD));
        }
    }

    #[test]
    fn constructed_environments_are_stochastic() {
        assert_rows_stochastic(&make_riverswim(6).unwrap());
        assert_rows_stochastic(&make_riverswim(3).unwrap());
        let (t, d) = make_two_model_trap();
        assert_rows_stochastic(&t);
        assert_rows_stochastic(&d);
        assert_rows_stochastic(&make_sparse_chain(8, 1.0).unwrap());
    }

    #[test]
    fn constructor_preconditions() {
        assert!(matches!(make_riverswim::<f64>(2), Err(Error::Usage(_))));
        assert!(matches!(make_sparse_chain::<f64>(3, 1.0), Err(Error::Usage(_))));
        let bad = Array3::<f64>::from_elem((1, 1, 2), 0.6);
        assert!(TabularMdp::new(bad, array![[0.0]], array![1.0], Objective::Horizon(1)).is_err());
    }

    #[test]
    fn sparse_chain_has_single_reward() {
        let m: TabularMdp<f64> = make_sparse_chain(8, 2.5).unwrap();
        let nonzero: Vec<_> = m.rewards().indexed_iter().filter(|(_, &r)| r != 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(nonzero[0].0, (6, chain::FORWARD));
    }

    #[test]
    fn uniform_policy_goal_probability_matches_absorption() {
        let m: TabularMdp<f64> = make_sparse_chain(8, 1.0).unwrap();
        let h = m.episode_length();
        // Mass absorbed in the terminal state after h steps of the uniform walk.
        let mut d = Array1::<f64>::zeros(8);
        d[0] = 1.0;
        for _ in 0..h {
            let mut next = Array1::<f64>::zeros(8);
            for s in 0..8 {
                for a in 0..2 {
                    next.scaled_add(0.5 * d[s], &m.transition_row(s, a));
                }
            }
            d = next;
        }
        assert_eq!(d[7], 1031.0 / 8192.0);

        let mut rng = seeded(12, 0);
        let episodes = 100_000;
        let mut hits = 0;
        for _ in 0..episodes {
            let mut s = m.sample_initial(&mut rng);
            let mut got = false;
            for _ in 0..h {
                let (next, r) = m.step(s, rng.gen_range(0..2), &mut rng).unwrap();
                got |= r > 0.0;
                s = next;
            }
            hits += usize::from(got);
        }
        let p = d[7];
        let freq = hits as f64 / episodes as f64;
        assert!((freq - p).abs() < 4.0 * (p * (1.0 - p) / episodes as f64).sqrt(), "{freq} vs {p}");
    }

    #[test]
    fn trap_models_agree_on_stay_loop() {
        let (t, d) = make_two_model_trap::<f64>();
        assert_eq!(t.rewards(), d.rewards());
        for s in 0..2 {
            assert_eq!(t.transition_row(s, trap::STAY), d.transition_row(s, trap::STAY));
        }
        assert_eq!(t.transition_row(1, trap::GO), d.transition_row(1, trap::GO));
        assert_ne!(t.transition_row(0, trap::GO), d.transition_row(0, trap::GO));

        let mut rng = seeded(9, 0);
        let mut data = Vec::new();
        let mut s = 0;
        for t_step in 1..=500u64 {
            let (s2, r) = t.step(s, trap::STAY, &mut rng).unwrap();
            data.push(Transition { s, a: trap::STAY, r, s_next: s2, t: t_step });
            s = s2;
        }
        assert_eq!(t.log_likelihood(&data), d.log_likelihood(&data));
    }

    #[test]
    fn seeded_trajectory_replays_bit_exactly() {
        let m: TabularMdp<f64> = make_riverswim(6).unwrap();
        let roll = |seed| {
            let mut rng = seeded(seed, 0);
            let mut s = 0;
            let mut out = Vec::new();
            for i in 0..300 {
                let (s2, r) = m.step(s, i % 2, &mut rng).unwrap();
                out.push((s2, r.to_bits()));
                s = s2;
            }
            out
        };
        assert_eq!(roll(4), roll(4));
    }

    #[test]
    fn replay_buffer_evicts_oldest() {
        let mut b = ReplayBuffer::<f64>::with_capacity(3).unwrap();
        for t in 1..=5u64 {
            b.push(Transition { s: t as usize, a: 0, r: 0.0, s_next: 0, t });
        }
        assert_eq!(b.len(), 3);
        let ts: Vec<u64> = b.iter().map(|tr| tr.t).collect();
        assert_eq!(ts, vec![3, 4, 5]);
        assert_eq!(b.recent_states(2), vec![4, 5]);
    }

    #[test]
    fn f32_environments_construct() {
        let m: TabularMdp<f32> = make_riverswim(5).unwrap();
        assert_eq!(m.num_states(), 5);
    }
}
