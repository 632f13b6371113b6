//! Softmax-parameterized categorical distributions.

use ndarray::{Array1, ArrayView1, ArrayViewMut1};

use crate::scalar::Scalar;

fn max_of<T: Scalar>(logits: ArrayView1<'_, T>) -> T {
    logits.iter().copied().fold(T::neg_infinity(), T::max)
}

/// `softmax(logits)` with max subtraction.
pub fn softmax<T: Scalar>(logits: ArrayView1<'_, T>) -> Array1<T> {
    let m = max_of(logits);
    let mut out = logits.mapv(|z| (z - m).exp());
    let total: T = out.iter().copied().sum();
    out.mapv_inplace(|e| e / total);
    out
}

/// `log softmax(logits)[k]` with max subtraction.
pub fn log_softmax_at<T: Scalar>(logits: ArrayView1<'_, T>, k: usize) -> T {
    let m = max_of(logits);
    let lse = logits.iter().map(|&z| (z - m).exp()).sum::<T>().ln() + m;
    logits[k] - lse
}

/// Shannon entropy in nats. Zero-probability atoms contribute nothing.
pub fn entropy<T: Scalar>(probs: ArrayView1<'_, T>) -> T {
    probs
        .iter()
        .filter(|&&p| p > T::zero())
        .map(|&p| -p * p.ln())
        .sum()
}

/// Adds `scale * (onehot(k) - probs)` into `out`, the logit gradient of
/// `scale * log softmax(z)[k]`.
pub fn add_score<T: Scalar>(mut out: ArrayViewMut1<'_, T>, probs: ArrayView1<'_, T>, k: usize, scale: T) {
    for (j, (o, &p)) in out.iter_mut().zip(probs.iter()).enumerate() {
        let indicator = if j == k { T::one() } else { T::zero() };
        *o += scale * (indicator - p);
    }
}

/// Adds `scale * dH/dz` into `out`, where `dH/dz_j = -p_j (ln p_j + H)`.
pub fn add_entropy_gradient<T: Scalar>(mut out: ArrayViewMut1<'_, T>, probs: ArrayView1<'_, T>, scale: T) {
    let h = entropy(probs);
    for (o, &p) in out.iter_mut().zip(probs.iter()) {
        if p > T::zero() {
            *o += scale * (-p * (p.ln() + h));
        }
    }
}

/// KL(probs || uniform) = ln K - H(probs).
pub fn kl_to_uniform<T: Scalar>(probs: ArrayView1<'_, T>) -> T {
    T::from_count(probs.len()).ln() - entropy(probs)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_lowest<T: Scalar>(values: ArrayView1<'_, T>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
