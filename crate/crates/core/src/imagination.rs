//! Learning in imagination: rollouts inside the learned model, λ-returns,
//! the percentile-range return normalizer and advantages.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::categorical::{self, argmax_lowest};
use crate::error::{Error, Result};
use crate::rng::sample_categorical;
use crate::scalar::Scalar;
use crate::world_model::SoftmaxDynamicsModel;

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy<T> {
    logits: Array2<T>,
}

impl<T: Scalar> SoftmaxPolicy<T> {
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            logits: Array2::zeros((num_states, num_actions)),
        }
    }

    pub fn from_logits(logits: Array2<T>) -> Result<Self> {
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidModel("non-finite policy logit".into()));
        }
        Ok(Self { logits })
    }

    pub fn num_states(&self) -> usize {
        self.logits.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.logits.ncols()
    }

    pub fn logits(&self) -> &Array2<T> {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut Array2<T> {
        &mut self.logits
    }

    pub fn probs(&self, s: usize) -> Array1<T> {
        categorical::softmax(self.logits.row(s))
    }

    /// `π(a|s)` for every state, as a row-stochastic matrix.
    pub fn probabilities(&self) -> Array2<T> {
        let mut out = Array2::zeros(self.logits.dim());
        for s in 0..self.num_states() {
            out.row_mut(s).assign(&self.probs(s));
        }
        out
    }

    /// Argmax action, lowest index on ties.
    pub fn greedy(&self, s: usize) -> usize {
        argmax_lowest(self.logits.row(s))
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        sample_categorical(self.probs(s).view(), rng)
    }

    pub fn mean_entropy(&self) -> T {
        let total: T = (0..self.num_states())
            .map(|s| categorical::entropy(self.probs(s).view()))
            .sum();
        total / T::from_count(self.num_states())
    }
}

/// Tabular state-value estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic<T> {
    pub values: Array1<T>,
}

impl<T: Scalar> Critic<T> {
    pub fn zeros(num_states: usize) -> Self {
        Self {
            values: Array1::zeros(num_states),
        }
    }
}

/// One imagined trajectory of length `L`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImaginedTrajectory<T> {
    /// `L + 1` entries.
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<T>,
    /// `L + 1` entries; empty until [`ImaginedBatch::attach_values`].
    pub values: Vec<T>,
    /// Empty until [`ImaginedBatch::fill_lambda_returns`].
    pub lambda_returns: Vec<T>,
    /// Empty until [`compute_advantages`].
    pub advantages: Vec<T>,
}

impl<T: Scalar> ImaginedTrajectory<T> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Undiscounted sum of imagined rewards, `R(τ)`.
    pub fn total_reward(&self) -> T {
        self.rewards.iter().copied().sum()
    }

    /// `(s_ℓ, a_ℓ, s_{ℓ+1})` for ℓ = 0..L-1.
    pub fn steps(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.len()).map(move |l| (self.states[l], self.actions[l], self.states[l + 1]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImaginedBatch<T> {
    pub trajectories: Vec<ImaginedTrajectory<T>>,
    /// The normalizer scale `S` used for this batch's advantages.
    pub scale_used: Option<T>,
}

impl<T: Scalar> ImaginedBatch<T> {
    pub fn n_traj(&self) -> usize {
        self.trajectories.len()
    }

    pub fn length(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.len())
    }

    pub fn attach_values(&mut self, critic: &Critic<T>) {
        for traj in &mut self.trajectories {
            traj.values = traj.states.iter().map(|&s| critic.values[s]).collect();
        }
    }

    pub fn fill_lambda_returns(&mut self, gamma: T, lam: T) -> Result<()> {
        for traj in &mut self.trajectories {
            traj.lambda_returns = lambda_returns(&traj.rewards, &traj.values, gamma, lam)?;
        }
        Ok(())
    }

    pub fn all_lambda_returns(&self) -> Vec<T> {
        self.trajectories
            .iter()
            .flat_map(|t| t.lambda_returns.iter().copied())
            .collect()
    }
}

/// Where imagined trajectories begin.
#[derive(Debug, Clone, Copy)]
pub enum StartStates<'a, T> {
    /// Uniform over the listed (recent real) states.
    Replay(&'a [usize]),
    /// The environment's initial distribution.
    Initial(ArrayView1<'a, T>),
}

impl<'a, T: Scalar> StartStates<'a, T> {
    /// Replayed states when available, otherwise the initial distribution.
    pub fn replay_or_initial(recent: &'a [usize], initial: ArrayView1<'a, T>) -> Self {
        if recent.is_empty() {
            StartStates::Initial(initial)
        } else {
            StartStates::Replay(recent)
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            StartStates::Replay(states) => states[rng.gen_range(0..states.len())],
            StartStates::Initial(mu) => sample_categorical(*mu, rng),
        }
    }
}

/// Rolls `n_traj` trajectories of length `length` through the learned model.
///
/// Per trajectory the draw order is: start state, then for each step the
/// action followed by the successor.
pub fn rollout<T: Scalar, R: Rng + ?Sized>(
    dynamics: &SoftmaxDynamicsModel<T>,
    rewards: ArrayView2<'_, T>,
    policy: &SoftmaxPolicy<T>,
    starts: StartStates<'_, T>,
    n_traj: usize,
    length: usize,
    rng: &mut R,
) -> Result<ImaginedBatch<T>> {
    if n_traj == 0 || length == 0 {
        return Err(Error::usage("rollout needs at least one trajectory of length at least one"));
    }
    let (ns, na) = (dynamics.num_states(), dynamics.num_actions());
    // Rows are computed lazily; models are small and rollouts revisit rows.
    let mut model_rows: Vec<Option<Array1<T>>> = vec![None; ns * na];
    let mut policy_rows: Vec<Option<Array1<T>>> = vec![None; ns];
    let mut trajectories = Vec::with_capacity(n_traj);
    for _ in 0..n_traj {
        let mut traj = ImaginedTrajectory {
            states: Vec::with_capacity(length + 1),
            actions: Vec::with_capacity(length),
            rewards: Vec::with_capacity(length),
            ..Default::default()
        };
        let mut s = starts.draw(rng);
        traj.states.push(s);
        for _ in 0..length {
            let pi = policy_rows[s].get_or_insert_with(|| policy.probs(s));
            let a = sample_categorical(pi.view(), rng);
            let p = model_rows[s * na + a].get_or_insert_with(|| dynamics.prob_row(s, a));
            let next = sample_categorical(p.view(), rng);
            traj.actions.push(a);
            traj.rewards.push(rewards[[s, a]]);
            traj.states.push(next);
            s = next;
        }
        trajectories.push(traj);
    }
    Ok(ImaginedBatch {
        trajectories,
        scale_used: None,
    })
}

/// Bootstrapped λ-returns:
/// `G_L = V_L`, `G_ℓ = r_ℓ + γ((1-λ) V_{ℓ+1} + λ G_{ℓ+1})`.
pub fn lambda_returns<T: Scalar>(rewards: &[T], values: &[T], gamma: T, lam: T) -> Result<Vec<T>> {
    if values.len() != rewards.len() + 1 {
        return Err(Error::usage(format!(
            "lambda_returns needs L+1 values for L rewards, got {} and {}",
            values.len(),
            rewards.len()
        )));
    }
    if !(gamma > T::zero() && gamma <= T::one()) || !(lam >= T::zero() && lam <= T::one()) {
        return Err(Error::usage("gamma must be in (0,1] and lambda in [0,1]"));
    }
    let l = rewards.len();
    let mut out = vec![T::zero(); l];
    let mut next = values[l];
    for i in (0..l).rev() {
        let g = rewards[i] + gamma * ((T::one() - lam) * values[i + 1] + lam * next);
        out[i] = g;
        next = g;
    }
    Ok(out)
}

/// Linear-interpolation percentile of an ascending-sorted sample
/// (inclusive endpoints: rank `p/100 · (n-1)`).
pub fn percentile_sorted<T: Scalar>(sorted: &[T], pct: T) -> T {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = pct / T::lit(100.0) * T::from_count(n - 1);
    let lo = rank.floor();
    let lo_i = lo.to_usize().unwrap_or(0).min(n - 1);
    let hi_i = (lo_i + 1).min(n - 1);
    let frac = rank - lo;
    sorted[lo_i] + frac * (sorted[hi_i] - sorted[lo_i])
}

/// EMA of the 5th-95th percentile range of λ-returns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnNormalizer<T> {
    ema_range: T,
    decay: T,
    lower_pct: T,
    upper_pct: T,
    initialized: bool,
}

impl<T: Scalar> Default for ReturnNormalizer<T> {
    fn default() -> Self {
        Self::new(T::lit(0.99))
    }
}

impl<T: Scalar> ReturnNormalizer<T> {
    pub fn new(decay: T) -> Self {
        Self {
            ema_range: T::zero(),
            decay,
            lower_pct: T::lit(5.0),
            upper_pct: T::lit(95.0),
            initialized: false,
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Current `S` (zero before the first update).
    pub fn ema_range(&self) -> T {
        self.ema_range
    }

    /// `max(1, S)`; 1 before the first update.
    pub fn denominator(&self) -> T {
        if self.initialized {
            self.ema_range.max(T::one())
        } else {
            T::one()
        }
    }

    /// Folds one batch of returns into the EMA and returns the updated `S`.
    pub fn update(&mut self, returns: &[T]) -> Result<T> {
        if returns.is_empty() {
            return Err(Error::usage("update_normalizer needs at least one return"));
        }
        let mut sorted = returns.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("returns must not be NaN"));
        let range = percentile_sorted(&sorted, self.upper_pct) - percentile_sorted(&sorted, self.lower_pct);
        if self.initialized {
            self.ema_range = self.ema_range + (T::one() - self.decay) * (range - self.ema_range);
        } else {
            self.ema_range = range;
            self.initialized = true;
        }
        Ok(self.ema_range)
    }
}

/// When the normalizer sees the current batch relative to scaling it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizerOrder {
    /// Fold this batch's returns into `S`, then divide by `max(1, S)`.
    #[default]
    UpdateThenUse,
    /// Divide by the previous `max(1, S)`, then fold the batch in.
    UseThenUpdate,
}

/// Fills `A_ℓ = (G^λ_ℓ - V(s_ℓ)) / max(1, S)` and records `S` on the batch.
pub fn compute_advantages<T: Scalar>(
    batch: &mut ImaginedBatch<T>,
    norm: &mut ReturnNormalizer<T>,
    order: NormalizerOrder,
) -> Result<()> {
    if batch.trajectories.iter().any(|t| t.lambda_returns.len() != t.len() || t.values.len() != t.len() + 1) {
        return Err(Error::usage("compute_advantages needs values and lambda returns"));
    }
    let returns = batch.all_lambda_returns();
    let denom = match order {
        NormalizerOrder::UpdateThenUse => {
            norm.update(&returns)?;
            norm.denominator()
        }
        NormalizerOrder::UseThenUpdate => {
            let d = norm.denominator();
            norm.update(&returns)?;
            d
        }
    };
    apply_advantages(batch, denom);
    batch.scale_used = Some(norm.ema_range());
    Ok(())
}

/// Fills advantages with an explicit denominator.
pub fn apply_advantages<T: Scalar>(batch: &mut ImaginedBatch<T>, denom: T) {
    for traj in &mut batch.trajectories {
        traj.advantages = traj
            .lambda_returns
            .iter()
            .zip(&traj.values)
            .map(|(&g, &v)| (g - v) / denom)
            .collect();
    }
}

/// Exact state marginals of the imagined Markov chain at steps 0..=L.
pub fn exact_state_marginals<T: Scalar>(
    dynamics: &SoftmaxDynamicsModel<T>,
    policy: &SoftmaxPolicy<T>,
    start: ArrayView1<'_, T>,
    length: usize,
) -> Vec<Array1<T>> {
    let p = dynamics.probabilities();
    let pi = policy.probabilities();
    let ns = dynamics.num_states();
    let mut out = vec![start.to_owned()];
    for _ in 0..length {
        let cur = out.last().expect("nonempty");
        let mut next = Array1::zeros(ns);
        for s in 0..ns {
            for a in 0..dynamics.num_actions() {
                let w = cur[s] * pi[[s, a]];
                next.scaled_add(w, &p.slice(s![s, a, ..]));
            }
        }
        out.push(next);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::{array, Array3};
    use proptest::prelude::*;
    use rand::Rng;

    fn reference_lambda(rewards: &[f64], values: &[f64], gamma: f64, lam: f64) -> Vec<f64> {
        // n-step mixture form with the tail weight on the full return
        let l = rewards.len();
        (0..l)
            .map(|t| {
                let horizon = l - t;
                let nstep = |n: usize| {
                    let mut g = 0.0;
                    for k in 0..n {
                        g += gamma.powi(k as i32) * rewards[t + k];
                    }
                    g + gamma.powi(n as i32) * values[t + n]
                };
                let mut g = 0.0;
                for n in 1..horizon {
                    g += (1.0 - lam) * lam.powi(n as i32 - 1) * nstep(n);
                }
                g + lam.powi(horizon as i32 - 1) * nstep(horizon)
            })
            .collect()
    }

    #[test]
    fn lambda_regression_value() {
        let r = [1.0, 0.0, 2.0];
        let v = [0.0, 0.0, 0.0, 5.0];
        let got = lambda_returns(&r, &v, 0.9, 0.5).unwrap();
        let reference = reference_lambda(&r, &v, 0.9, 0.5);
        // Frozen from the n-step mixture reference.
        let pinned = [2.31625, 2.925, 6.5];
        for i in 0..3 {
            assert!((got[i] - reference[i]).abs() < 1e-12);
            assert!((got[i] - pinned[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_closed_forms() {
        let r = [0.5, -1.0, 2.0, 0.25];
        let v = [1.0, 2.0, -3.0, 0.5, 4.0];
        let g0 = lambda_returns(&r, &v, 0.9, 0.0).unwrap();
        for l in 0..4 {
            assert_eq!(g0[l], r[l] + 0.9 * v[l + 1]);
        }
        let g1 = lambda_returns(&r, &v, 0.9, 1.0).unwrap();
        for l in 0..4 {
            let mut mc = 0.0;
            for k in l..4 {
                mc += 0.9f64.powi((k - l) as i32) * r[k];
            }
            mc += 0.9f64.powi((4 - l) as i32) * v[4];
            assert!((g1[l] - mc).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_length_mismatch() {
        assert!(matches!(lambda_returns(&[1.0], &[0.0], 0.9, 0.5), Err(Error::Usage(_))));
    }

    /// 21 sorted values whose 5th and 95th percentiles sit exactly on 0 and `range`.
    fn spread_sample(range: f64) -> Vec<f64> {
        let mut v = vec![-1.0, 0.0];
        v.extend((1..=17).map(|i| range * i as f64 / 18.0));
        v.extend([range, range + 1.0]);
        v
    }

    #[test]
    fn normalizer_examples() {
        let mut n = ReturnNormalizer::<f64>::default();
        assert_eq!(n.denominator(), 1.0);
        let ramp: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        assert_eq!(n.update(&ramp).unwrap(), 90.0);

        let mut n = ReturnNormalizer::<f64>::default();
        n.update(&[3.0; 10]).unwrap();
        assert_eq!(n.ema_range(), 0.0);
        assert_eq!(n.denominator(), 1.0);

        let mut n = ReturnNormalizer::<f64>::new(0.99);
        assert_eq!(n.update(&spread_sample(10.0)).unwrap(), 10.0);
        assert_eq!(n.update(&spread_sample(20.0)).unwrap(), 10.1);
        assert!(matches!(n.update(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn constant_returns_decay_scale() {
        let mut n = ReturnNormalizer::<f64>::new(0.5);
        n.update(&[0.0, 8.0]).unwrap();
        let first = n.ema_range();
        n.update(&[1.0, 1.0]).unwrap();
        assert_eq!(n.ema_range(), first * 0.5);
    }

    fn batch_with(returns: Vec<f64>, values: Vec<f64>) -> ImaginedBatch<f64> {
        let l = returns.len();
        ImaginedBatch {
            trajectories: vec![ImaginedTrajectory {
                states: vec![0; l + 1],
                actions: vec![0; l],
                rewards: vec![0.0; l],
                values,
                lambda_returns: returns,
                advantages: vec![],
            }],
            scale_used: None,
        }
    }

    #[test]
    fn advantages_clamp_and_scale() {
        let mut b = batch_with(vec![1.0, 2.0], vec![1.0, 2.0, 0.0]);
        let mut n = ReturnNormalizer::default();
        compute_advantages(&mut b, &mut n, NormalizerOrder::UpdateThenUse).unwrap();
        assert_eq!(b.trajectories[0].advantages, vec![0.0, 0.0]);

        let mut b = batch_with(vec![1.0, 2.0], vec![0.0, 0.0, 0.0]);
        apply_advantages(&mut b, ReturnNormalizer::<f64>::new(0.99).denominator());
        assert_eq!(b.trajectories[0].advantages, vec![1.0, 2.0]);

        // S = 0.5 → denominator 1; S = 4 → denominator 4.
        let mut n = ReturnNormalizer::<f64>::new(0.99);
        n.update(&[0.0, 0.5 / 0.9]).unwrap();
        assert!((n.ema_range() - 0.5).abs() < 1e-12);
        assert_eq!(n.denominator(), 1.0);
        let mut n = ReturnNormalizer::<f64>::new(0.99);
        n.update(&[0.0, 4.0 / 0.9]).unwrap();
        let mut b = batch_with(vec![3.0, 5.0], vec![1.0, 1.0, 0.0]);
        apply_advantages(&mut b, n.denominator());
        let s = n.ema_range();
        assert_eq!(b.trajectories[0].advantages, vec![2.0 / s, 4.0 / s]);
    }

    #[test]
    fn normalizer_order_picks_denominator() {
        // Percentiles of [0, 10] are 0.5 and 9.5, so the batch alone gives S = 9.
        for (order, expected) in [(NormalizerOrder::UpdateThenUse, 10.0 / 9.0), (NormalizerOrder::UseThenUpdate, 10.0)] {
            let mut b = batch_with(vec![0.0, 10.0], vec![0.0; 3]);
            let mut n = ReturnNormalizer::<f64>::new(0.99);
            compute_advantages(&mut b, &mut n, order).unwrap();
            assert_eq!(b.trajectories[0].advantages, vec![0.0, expected]);
            assert_eq!(b.scale_used, Some(9.0));
        }
    }

    #[test]
    fn rollout_shapes_and_determinism() {
        let model = SoftmaxDynamicsModel::<f64>::uniform(3, 2);
        let policy = SoftmaxPolicy::uniform(3, 2);
        let r = Array2::from_elem((3, 2), 0.5);
        let mu = array![1.0, 0.0, 0.0];
        let run = |seed| {
            let mut rng = seeded(seed, 0);
            rollout(&model, r.view(), &policy, StartStates::Initial(mu.view()), 5, 1, &mut rng).unwrap()
        };
        let b = run(1);
        assert_eq!(b.n_traj(), 5);
        assert!(b.trajectories.iter().all(|t| t.actions.len() == 1 && t.states.len() == 2));
        assert_eq!(run(1), b);
        assert!(matches!(
            rollout(&model, r.view(), &policy, StartStates::Initial(mu.view()), 0, 3, &mut seeded(0, 0)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn deterministic_model_and_policy_give_identical_trajectories() {
        let mut logits = Array3::zeros((3, 2, 3));
        for s in 0..3 {
            for a in 0..2 {
                logits[[s, a, (s + a + 1) % 3]] = 60.0;
            }
        }
        let model = SoftmaxDynamicsModel::from_logits(logits).unwrap();
        let policy = SoftmaxPolicy::from_logits(array![[60.0, 0.0], [0.0, 60.0], [60.0, 0.0]]).unwrap();
        let r = Array2::zeros((3, 2));
        let mut rng = seeded(2, 0);
        let b = rollout(&model, r.view(), &policy, StartStates::Replay(&[1]), 8, 6, &mut rng).unwrap();
        for t in &b.trajectories {
            assert_eq!(t.states, b.trajectories[0].states);
            assert_eq!(t.actions, b.trajectories[0].actions);
        }
    }

    #[test]
    fn rollout_marginals_match_exact_chain() {
        let mut rng = seeded(3, 0);
        let logits = Array3::from_shape_fn((3, 2, 3), |_| rng.gen_range(-1.5..1.5));
        let model = SoftmaxDynamicsModel::from_logits(logits).unwrap();
        let policy = SoftmaxPolicy::from_logits(Array2::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0))).unwrap();
        let mu = array![0.2, 0.5, 0.3];
        let length = 4;
        let exact = exact_state_marginals(&model, &policy, mu.view(), length);
        let r = Array2::zeros((3, 2));
        let n = 100_000;
        let b = rollout(&model, r.view(), &policy, StartStates::Initial(mu.view()), n, length, &mut rng).unwrap();
        for step in 0..=length {
            let mut freq = [0.0; 3];
            for t in &b.trajectories {
                freq[t.states[step]] += 1.0 / n as f64;
            }
            for s in 0..3 {
                assert!((freq[s] - exact[step][s]).abs() < 0.01, "step {step} state {s}");
            }
        }
    }

    proptest! {
        #[test]
        fn recomputed_lambda_returns_are_bit_exact(
            rewards in proptest::collection::vec(-5.0f64..5.0, 1..20),
            seed in 0u64..1000,
            gamma in 0.5f64..1.0,
            lam in 0.0f64..=1.0,
        ) {
            let mut rng = seeded(seed, 0);
            let values: Vec<f64> = (0..=rewards.len()).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let a = lambda_returns(&rewards, &values, gamma, lam).unwrap();
            let b = lambda_returns(&rewards, &values, gamma, lam).unwrap();
            prop_assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            let reference = reference_lambda(&rewards, &values, gamma, lam);
            for (x, y) in a.iter().zip(&reference) {
                prop_assert!((x - y).abs() < 1e-9 * (1.0 + y.abs()));
            }
        }

        #[test]
        fn scaling_the_normalizer_scales_advantages(c in 1.0f64..50.0, s in 1.0f64..10.0) {
            let mut b1 = batch_with(vec![3.0, -1.0, 7.5], vec![0.5, 1.0, 2.0, 0.0]);
            let mut b2 = b1.clone();
            apply_advantages(&mut b1, s);
            apply_advantages(&mut b2, c * s);
            for (x, y) in b1.trajectories[0].advantages.iter().zip(&b2.trajectories[0].advantages) {
                prop_assert!((y - x / c).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }
}
