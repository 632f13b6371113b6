//! Seeded randomness.
//!
//! Every run draws from ChaCha8 (`rand_chacha::ChaCha8Rng`) keyed by the run
//! seed. Independent consumers use distinct ChaCha stream ids so that, for
//! instance, evaluation episodes never perturb the training draw sequence.

use ndarray::ArrayView1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

pub type RunRng = ChaCha8Rng;

/// Stream ids used by the training loop.
pub mod streams {
    pub const TRAIN: u64 = 0;
    pub const EVAL: u64 = 1;
    pub const HELDOUT: u64 = 2;
}

pub fn seeded(seed: u64, stream: u64) -> RunRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Inverse-CDF draw from a categorical distribution.
///
/// Consumes exactly one `f64` from `rng`. Accumulation is done in `f64`
/// regardless of the scalar type; if rounding leaves the uniform draw above
/// the total mass, the last index with positive mass is returned.
pub fn sample_categorical<T: Scalar, R: Rng + ?Sized>(probs: ArrayView1<'_, T>, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        let p = p.as_f64();
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}
