//! Learnable dynamics and reward models.
//!
//! The dynamics model is a table of logits; every `(s, a)` row induces a
//! categorical distribution over successors through a softmax, so all
//! log-probability and entropy gradients are available in closed form.

use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::categorical::{self, add_entropy_gradient, add_score};
use crate::error::{Error, Result};
use crate::mdp::Transition;
use crate::scalar::Scalar;

/// Gradient with respect to a dynamics model's `[s][a][s']` logits.
pub type GradientTensor<T> = Array3<T>;

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxDynamicsModel<T> {
    logits: Array3<T>,
}

impl<T: Scalar> SoftmaxDynamicsModel<T> {
    /// All-zero logits: every row starts uniform.
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            logits: Array3::zeros((num_states, num_actions, num_states)),
        }
    }

    pub fn from_logits(logits: Array3<T>) -> Result<Self> {
        let (ns, _, ns2) = logits.dim();
        if ns != ns2 {
            return Err(Error::InvalidModel(format!("logit shape {:?} is not [S][A][S]", logits.dim())));
        }
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidModel("non-finite logit".into()));
        }
        Ok(Self { logits })
    }

    pub fn num_states(&self) -> usize {
        self.logits.dim().0
    }

    pub fn num_actions(&self) -> usize {
        self.logits.dim().1
    }

    pub fn logits(&self) -> &Array3<T> {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut Array3<T> {
        &mut self.logits
    }

    pub fn zero_gradient(&self) -> GradientTensor<T> {
        Array3::zeros(self.logits.dim())
    }

    fn check(&self, s: usize, a: usize, s_next: usize) -> Result<()> {
        let (ns, na, _) = self.logits.dim();
        if s >= ns || s_next >= ns || a >= na {
            return Err(Error::usage(format!(
                "index ({s}, {a}, {s_next}) out of bounds for model with {ns} states and {na} actions"
            )));
        }
        Ok(())
    }

    pub fn prob_row(&self, s: usize, a: usize) -> Array1<T> {
        categorical::softmax(self.logits.slice(s![s, a, ..]))
    }

    /// Induced transition tensor.
    pub fn probabilities(&self) -> Array3<T> {
        let mut out = Array3::zeros(self.logits.dim());
        for s in 0..self.num_states() {
            for a in 0..self.num_actions() {
                out.slice_mut(s![s, a, ..]).assign(&self.prob_row(s, a));
            }
        }
        out
    }

    pub fn log_prob(&self, s: usize, a: usize, s_next: usize) -> Result<T> {
        self.check(s, a, s_next)?;
        Ok(categorical::log_softmax_at(self.logits.slice(s![s, a, ..]), s_next))
    }

    /// Mean log-likelihood of `batch`.
    pub fn mean_log_likelihood(&self, batch: &[Transition<T>]) -> Result<T> {
        if batch.is_empty() {
            return Err(Error::usage("empty batch"));
        }
        let mut total = T::zero();
        for tr in batch {
            total += self.log_prob(tr.s, tr.a, tr.s_next)?;
        }
        Ok(total / T::from_count(batch.len()))
    }

    /// Shannon entropy (nats) of row `(s, a)` and its gradient with respect
    /// to that row's logits.
    pub fn entropy_and_gradient(&self, s: usize, a: usize) -> Result<(T, Array1<T>)> {
        self.check(s, a, 0)?;
        let p = self.prob_row(s, a);
        let mut g = Array1::zeros(p.len());
        add_entropy_gradient(g.view_mut(), p.view(), T::one());
        Ok((categorical::entropy(p.view()), g))
    }

    pub fn mean_entropy(&self) -> T {
        let (ns, na, _) = self.logits.dim();
        let mut total = T::zero();
        for s in 0..ns {
            for a in 0..na {
                total += categorical::entropy(self.prob_row(s, a).view());
            }
        }
        total / T::from_count(ns * na)
    }

    /// Adds `scale * ∇ log p(s_next | s, a)` into `grad`, reusing a
    /// precomputed probability row.
    pub(crate) fn accumulate_score(grad: &mut GradientTensor<T>, probs: ArrayView1<'_, T>, tr: (usize, usize, usize), scale: T) {
        let (s, a, s_next) = tr;
        add_score(grad.slice_mut(s![s, a, ..]), probs, s_next, scale);
    }
}

/// Row-probability cache for one gradient evaluation.
pub(crate) struct RowCache<T> {
    rows: Vec<Option<Array1<T>>>,
    num_actions: usize,
}

impl<T: Scalar> RowCache<T> {
    pub(crate) fn new(num_states: usize, num_actions: usize) -> Self {
        Self {
            rows: vec![None; num_states * num_actions],
            num_actions,
        }
    }

    pub(crate) fn get<'a>(&'a mut self, logits: &Array3<T>, s: usize, a: usize) -> &'a Array1<T> {
        self.rows[s * self.num_actions + a].get_or_insert_with(|| categorical::softmax(logits.slice(s![s, a, ..])))
    }
}

/// Gradient of `(1/|batch|) Σ log p_φ(s' | s, a)` with respect to the logits.
///
/// Despite the name this is the gradient of the mean log-likelihood (the
/// negative of the NLL gradient); callers ascend it.
pub fn nll_gradient<T: Scalar>(model: &SoftmaxDynamicsModel<T>, batch: &[Transition<T>]) -> Result<GradientTensor<T>> {
    if batch.is_empty() {
        return Err(Error::usage("nll_gradient needs a nonempty batch"));
    }
    let mut grad = model.zero_gradient();
    add_log_likelihood_gradient(model, batch, T::one() / T::from_count(batch.len()), &mut grad)?;
    Ok(grad)
}

/// Adds `scale * Σ_batch ∇ log p_φ(s' | s, a)` into `grad`.
pub(crate) fn add_log_likelihood_gradient<T: Scalar>(
    model: &SoftmaxDynamicsModel<T>,
    batch: &[Transition<T>],
    scale: T,
    grad: &mut GradientTensor<T>,
) -> Result<()> {
    let mut cache = RowCache::new(model.num_states(), model.num_actions());
    for tr in batch {
        model.check(tr.s, tr.a, tr.s_next)?;
        let p = cache.get(model.logits(), tr.s, tr.a);
        SoftmaxDynamicsModel::accumulate_score(grad, p.view(), (tr.s, tr.a, tr.s_next), scale);
    }
    Ok(())
}

/// Running-mean reward estimator. Unvisited pairs report `prior`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel<T> {
    estimates: Array2<T>,
    counts: Array2<u64>,
    prior: T,
}

impl<T: Scalar> RewardModel<T> {
    pub fn new(num_states: usize, num_actions: usize) -> Self {
        Self::with_prior(num_states, num_actions, T::zero())
    }

    pub fn with_prior(num_states: usize, num_actions: usize, prior: T) -> Self {
        Self {
            estimates: Array2::from_elem((num_states, num_actions), prior),
            counts: Array2::zeros((num_states, num_actions)),
            prior,
        }
    }

    pub fn estimates(&self) -> &Array2<T> {
        &self.estimates
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    pub fn prior(&self) -> T {
        self.prior
    }

    pub fn update(&mut self, batch: &[Transition<T>]) {
        for tr in batch {
            let n = self.counts[[tr.s, tr.a]] + 1;
            self.counts[[tr.s, tr.a]] = n;
            let est = &mut self.estimates[[tr.s, tr.a]];
            if n == 1 {
                *est = tr.r;
            } else {
                *est += (tr.r - *est) / T::lit(n as f64);
            }
        }
    }

    /// Rewards used inside imagination: estimates plus `bonus / sqrt(max(1, N(s,a)))`.
    pub fn planning_rewards(&self, bonus: T) -> Array2<T> {
        let mut out = self.estimates.clone();
        if bonus != T::zero() {
            for ((s, a), r) in out.indexed_iter_mut() {
                let n = self.counts[[s, a]].max(1) as f64;
                *r += bonus / T::lit(n).sqrt();
            }
        }
        out
    }
}

/// Smoothed empirical transition frequencies.
///
/// Every successor receives `smoothing` pseudo-counts; a row with zero total
/// mass (no data and no smoothing) is uniform.
pub fn mle_point_estimate<'a, T: Scalar>(
    data: impl IntoIterator<Item = &'a Transition<T>>,
    num_states: usize,
    num_actions: usize,
    smoothing: T,
) -> Result<Array3<T>> {
    if smoothing < T::zero() {
        return Err(Error::usage("smoothing must be nonnegative"));
    }
    let mut counts = Array3::from_elem((num_states, num_actions, num_states), smoothing);
    for tr in data {
        if tr.s >= num_states || tr.s_next >= num_states || tr.a >= num_actions {
            return Err(Error::usage("transition index out of bounds"));
        }
        counts[[tr.s, tr.a, tr.s_next]] += T::one();
    }
    for s in 0..num_states {
        for a in 0..num_actions {
            let mut row = counts.slice_mut(s![s, a, ..]);
            let total: T = row.iter().copied().sum();
            if total > T::zero() {
                row.mapv_inplace(|c| c / total);
            } else {
                row.fill(T::one() / T::from_count(num_states));
            }
        }
    }
    Ok(counts)
}

pub const CHECKPOINT_FORMAT: &str = "owm-dynamics-logits";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk form of a dynamics model: a shape header plus row-major logits.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DynamicsCheckpoint {
    pub format: String,
    pub version: u32,
    /// `[num_states, num_actions, num_states]`
    pub shape: [usize; 3],
    pub logits: Vec<f64>,
}

impl<T: Scalar> SoftmaxDynamicsModel<T> {
    pub fn to_checkpoint(&self) -> DynamicsCheckpoint {
        let (a, b, c) = self.logits.dim();
        DynamicsCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            shape: [a, b, c],
            logits: self.logits.iter().map(|z| z.as_f64()).collect(),
        }
    }

    pub fn from_checkpoint(ck: &DynamicsCheckpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidModel(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
        }
        let [a, b, c] = ck.shape;
        if ck.logits.len() != a * b * c {
            return Err(Error::InvalidModel("logit count does not match shape".into()));
        }
        let logits = Array3::from_shape_vec((a, b, c), ck.logits.iter().map(|&z| T::lit(z)).collect())
            .map_err(|e| Error::InvalidModel(e.to_string()))?;
        Self::from_logits(logits)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: DynamicsCheckpoint = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_checkpoint(&ck)
    }
}
