//! Exact solvers for small MDPs: value iteration, policy evaluation,
//! expected imagined return and its gradient by enumeration, and central
//! finite differences.

use ndarray::{s, Array, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Dimension};

use crate::categorical::argmax_lowest;
use crate::error::{Error, Result};
use crate::mdp::{Objective, TabularMdp};
use crate::scalar::Scalar;
use crate::world_model::{GradientTensor, SoftmaxDynamicsModel};

/// Largest number of trajectories [`exact_j_gradient`] will enumerate.
pub const MAX_ENUMERATED_TRAJECTORIES: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution<T> {
    pub optimal_values: Array1<T>,
    pub optimal_policy: Vec<usize>,
    /// `⟨μ, V*⟩`
    pub j_star: T,
    /// Sup-norm Bellman optimality residual of `optimal_values`.
    pub bellman_residual: T,
}

/// `Q(s,a) = r(s,a) + γ Σ p(s'|s,a) V(s')`
pub fn q_values<T: Scalar>(transitions: ArrayView3<'_, T>, rewards: ArrayView2<'_, T>, values: ArrayView1<'_, T>, gamma: T) -> Array2<T> {
    let (ns, na, _) = transitions.dim();
    Array2::from_shape_fn((ns, na), |(s, a)| rewards[[s, a]] + gamma * transitions.slice(s![s, a, ..]).dot(&values))
}

fn bellman_backup<T: Scalar>(mdp: &TabularMdp<T>, values: ArrayView1<'_, T>, gamma: T) -> (Array1<T>, Vec<usize>) {
    let q = q_values(mdp.transitions().view(), mdp.rewards().view(), values, gamma);
    let policy: Vec<usize> = q.rows().into_iter().map(argmax_lowest).collect();
    let v = Array1::from_shape_fn(q.nrows(), |s| q[[s, policy[s]]]);
    (v, policy)
}

fn sup_norm<T: Scalar>(a: &Array1<T>, b: &Array1<T>) -> T {
    a.iter().zip(b).fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}

pub fn bellman_residual<T: Scalar>(mdp: &TabularMdp<T>, values: ArrayView1<'_, T>, gamma: T) -> T {
    let (backed, _) = bellman_backup(mdp, values, gamma);
    sup_norm(&backed, &values.to_owned())
}

/// Discounted optimal values by Bellman iteration, finished with exact
/// policy-iteration sweeps so the residual reaches floating-point level.
///
/// Greedy actions break ties by lowest index.
pub fn value_iteration<T: Scalar>(mdp: &TabularMdp<T>, gamma: T, tol: T) -> Result<OracleSolution<T>> {
    if !(gamma > T::zero() && gamma < T::one()) {
        return Err(Error::usage("value_iteration needs gamma in (0, 1)"));
    }
    let mut v = Array1::zeros(mdp.num_states());
    for _ in 0..100_000 {
        let (next, _) = bellman_backup(mdp, v.view(), gamma);
        let delta = sup_norm(&next, &v);
        v = next;
        if delta < tol {
            break;
        }
    }
    // Policy iteration from the greedy policy; switches only on strict gains.
    let (_, mut policy) = bellman_backup(mdp, v.view(), gamma);
    for _ in 0..1000 {
        let exact = evaluate_deterministic_discounted(mdp, &policy, gamma)?;
        let q = q_values(mdp.transitions().view(), mdp.rewards().view(), exact.view(), gamma);
        let margin = T::lit(1e-13) * (T::one() + exact.iter().fold(T::zero(), |m, x| m.max(x.abs())));
        let mut changed = false;
        for (s, a) in policy.iter_mut().enumerate() {
            let best = argmax_lowest(q.row(s));
            if q[[s, best]] > q[[s, *a]] + margin {
                *a = best;
                changed = true;
            }
        }
        v = exact;
        if !changed {
            break;
        }
    }
    let (_, policy) = bellman_backup(mdp, v.view(), gamma);
    let residual = bellman_residual(mdp, v.view(), gamma);
    let j_star = mdp.initial_dist().dot(&v);
    Ok(OracleSolution {
        optimal_values: v,
        optimal_policy: policy,
        j_star,
        bellman_residual: residual,
    })
}

/// Time-indexed optimal solution for a `T`-step undiscounted episode.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteHorizonSolution<T> {
    /// `values[h]` is the optimal value with `h` steps remaining; `values[0] = 0`.
    pub values: Vec<Array1<T>>,
    /// `policy[h][s]` is optimal with `h + 1` steps remaining.
    pub policy: Vec<Vec<usize>>,
    pub j_star: T,
}

pub fn finite_horizon_optimal<T: Scalar>(mdp: &TabularMdp<T>, horizon: usize) -> FiniteHorizonSolution<T> {
    let mut values = vec![Array1::zeros(mdp.num_states())];
    let mut policy = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let (v, pi) = bellman_backup(mdp, values.last().expect("nonempty").view(), T::one());
        values.push(v);
        policy.push(pi);
    }
    let j_star = mdp.initial_dist().dot(&values[horizon]);
    FiniteHorizonSolution { values, policy, j_star }
}

/// Optimal solution under the MDP's own objective. For a finite horizon the
/// reported values and policy are those at the first step.
pub fn solve<T: Scalar>(mdp: &TabularMdp<T>) -> Result<OracleSolution<T>> {
    match mdp.objective() {
        Objective::Discounted(gamma) => value_iteration(mdp, gamma, T::lit(1e-12)),
        Objective::Horizon(h) => {
            let sol = finite_horizon_optimal(mdp, h);
            let optimal_policy = sol.policy.last().cloned().unwrap_or_else(|| vec![0; mdp.num_states()]);
            Ok(OracleSolution {
                optimal_values: sol.values[h].clone(),
                optimal_policy,
                j_star: sol.j_star,
                bellman_residual: T::zero(),
            })
        }
    }
}

/// Row-stochastic policy table with a one-hot row per state.
pub fn deterministic_policy<T: Scalar>(actions: &[usize], num_actions: usize) -> Array2<T> {
    Array2::from_shape_fn((actions.len(), num_actions), |(s, a)| if actions[s] == a { T::one() } else { T::zero() })
}

fn evaluate_deterministic_discounted<T: Scalar>(mdp: &TabularMdp<T>, policy: &[usize], gamma: T) -> Result<Array1<T>> {
    discounted_values(mdp, deterministic_policy::<T>(policy, mdp.num_actions()).view(), gamma)
}

/// `V^π = (I - γ P_π)^{-1} r_π`
pub fn discounted_values<T: Scalar>(mdp: &TabularMdp<T>, policy: ArrayView2<'_, T>, gamma: T) -> Result<Array1<T>> {
    check_policy(mdp, policy)?;
    let ns = mdp.num_states();
    let p = mdp.transitions();
    let r = mdp.rewards();
    let mut a = Array2::<T>::eye(ns);
    let mut b = Array1::zeros(ns);
    for s in 0..ns {
        for act in 0..mdp.num_actions() {
            let w = policy[[s, act]];
            if w == T::zero() {
                continue;
            }
            b[s] += w * r[[s, act]];
            for s2 in 0..ns {
                a[[s, s2]] -= gamma * w * p[[s, act, s2]];
            }
        }
    }
    solve_linear(a, b)
}

fn check_policy<T: Scalar>(mdp: &TabularMdp<T>, policy: ArrayView2<'_, T>) -> Result<()> {
    if policy.dim() != (mdp.num_states(), mdp.num_actions()) {
        return Err(Error::usage(format!(
            "policy table has shape {:?}, environment needs {:?}",
            policy.dim(),
            (mdp.num_states(), mdp.num_actions())
        )));
    }
    Ok(())
}

/// Expected return `J(p, π)` under `μ`: a linear solve for a discounted
/// objective, backward recursion over `T` undiscounted steps otherwise.
pub fn policy_evaluation<T: Scalar>(mdp: &TabularMdp<T>, policy: ArrayView2<'_, T>, objective: Objective<T>) -> Result<T> {
    check_policy(mdp, policy)?;
    let values = match objective {
        Objective::Discounted(gamma) => {
            if !(gamma > T::zero() && gamma < T::one()) {
                return Err(Error::usage("policy_evaluation needs gamma in (0, 1)"));
            }
            discounted_values(mdp, policy, gamma)?
        }
        Objective::Horizon(h) => {
            let mut v = Array1::zeros(mdp.num_states());
            for _ in 0..h {
                let q = q_values(mdp.transitions().view(), mdp.rewards().view(), v.view(), T::one());
                v = (&q * &policy).sum_axis(ndarray::Axis(1));
            }
            v
        }
    };
    Ok(mdp.initial_dist().dot(&values))
}

/// Gaussian elimination with partial pivoting.
pub fn solve_linear<T: Scalar>(mut a: Array2<T>, mut b: Array1<T>) -> Result<Array1<T>> {
    let n = b.len();
    if a.dim() != (n, n) {
        return Err(Error::usage("solve_linear needs a square system"));
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[[i, col]].abs().partial_cmp(&a[[j, col]].abs()).expect("finite entries"))
            .expect("nonempty range");
        if a[[pivot, col]] == T::zero() {
            return Err(Error::usage("singular linear system"));
        }
        if pivot != col {
            for k in 0..n {
                a.swap([pivot, k], [col, k]);
            }
            b.swap(pivot, col);
        }
        for row in col + 1..n {
            let f = a[[row, col]] / a[[col, col]];
            if f == T::zero() {
                continue;
            }
            for k in col..n {
                let v = a[[col, k]];
                a[[row, k]] -= f * v;
            }
            let v = b[col];
            b[row] -= f * v;
        }
    }
    let mut x = Array1::zeros(n);
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[[row, k]] * x[k];
        }
        x[row] = acc / a[[row, row]];
    }
    Ok(x)
}

/// Exact expected undiscounted L-step imagined return
/// `E[Σ_{ℓ<L} r(s_ℓ, a_ℓ)]` with `s_0 ~ start`, by forward propagation.
pub fn exact_j<T: Scalar>(probs: ArrayView3<'_, T>, rewards: ArrayView2<'_, T>, policy: ArrayView2<'_, T>, start: ArrayView1<'_, T>, length: usize) -> T {
    let (ns, na, _) = probs.dim();
    let mut d = start.to_owned();
    let mut total = T::zero();
    for _ in 0..length {
        let mut next = Array1::<T>::zeros(ns);
        for s in 0..ns {
            if d[s] == T::zero() {
                continue;
            }
            for a in 0..na {
                let w = d[s] * policy[[s, a]];
                total += w * rewards[[s, a]];
                next.scaled_add(w, &probs.slice(s![s, a, ..]));
            }
        }
        d = next;
    }
    total
}

/// `E_τ[R(τ) Σ_ℓ ∇_φ log p_φ(s_{ℓ+1}|s_ℓ,a_ℓ)]` by enumerating every
/// trajectory of `length` steps.
pub fn exact_j_gradient<T: Scalar>(
    dynamics: &SoftmaxDynamicsModel<T>,
    rewards: ArrayView2<'_, T>,
    policy: ArrayView2<'_, T>,
    start: ArrayView1<'_, T>,
    length: usize,
) -> Result<GradientTensor<T>> {
    let (ns, na) = (dynamics.num_states(), dynamics.num_actions());
    let count = (ns as u128).checked_pow(length as u32 + 1).and_then(|x| x.checked_mul((na as u128).checked_pow(length as u32)?));
    match count {
        Some(c) if c <= MAX_ENUMERATED_TRAJECTORIES => {}
        _ => return Err(Error::usage(format!("enumerating {ns}^{} * {na}^{length} trajectories is too many", length + 1))),
    }
    let probs = dynamics.probabilities();
    let mut grad = dynamics.zero_gradient();
    let mut path: Vec<(usize, usize, usize)> = Vec::with_capacity(length);
    for s0 in 0..ns {
        if start[s0] == T::zero() {
            continue;
        }
        enumerate(&probs, rewards, policy, s0, start[s0], T::zero(), length, &mut path, &mut grad);
    }
    Ok(grad)
}

#[allow(clippy::too_many_arguments)]
fn enumerate<T: Scalar>(
    probs: &Array3<T>,
    rewards: ArrayView2<'_, T>,
    policy: ArrayView2<'_, T>,
    s: usize,
    weight: T,
    ret: T,
    remaining: usize,
    path: &mut Vec<(usize, usize, usize)>,
    grad: &mut GradientTensor<T>,
) {
    if remaining == 0 {
        let scale = weight * ret;
        if scale == T::zero() {
            return;
        }
        for &(s, a, s_next) in path.iter() {
            let mut row = grad.slice_mut(s![s, a, ..]);
            row.scaled_add(-scale, &probs.slice(s![s, a, ..]));
            row[s_next] += scale;
        }
        return;
    }
    let (ns, na, _) = probs.dim();
    for a in 0..na {
        let wa = weight * policy[[s, a]];
        if wa == T::zero() {
            continue;
        }
        for s_next in 0..ns {
            let w = wa * probs[[s, a, s_next]];
            if w == T::zero() {
                continue;
            }
            path.push((s, a, s_next));
            enumerate(probs, rewards, policy, s_next, w, ret + rewards[[s, a]], remaining - 1, path, grad);
            path.pop();
        }
    }
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` per coordinate.
pub fn finite_difference<T: Scalar, D: Dimension, F: Fn(&Array<T, D>) -> T>(f: F, params: &Array<T, D>, h: T) -> Array<T, D> {
    let mut x = params.as_standard_layout().into_owned();
    let n = x.len();
    let mut grad = Vec::with_capacity(n);
    let two_h = h + h;
    for i in 0..n {
        let orig = x.as_slice().expect("standard layout")[i];
        x.as_slice_mut().expect("standard layout")[i] = orig + h;
        let up = f(&x);
        x.as_slice_mut().expect("standard layout")[i] = orig - h;
        let down = f(&x);
        x.as_slice_mut().expect("standard layout")[i] = orig;
        grad.push((up - down) / two_h);
    }
    Array::from_shape_vec(params.raw_dim(), grad).expect("same element count")
}
