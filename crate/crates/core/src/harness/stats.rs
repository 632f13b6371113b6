//! Sample statistics used for reporting across seeds.

use crate::error::{Error, Result};

fn sorted(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::Aggregation("statistic of an empty sample".into()));
    }
    if xs.iter().any(|x| x.is_nan()) {
        return Err(Error::Aggregation("sample contains NaN".into()));
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    Ok(v)
}

pub fn mean(xs: &[f64]) -> Result<f64> {
    let v = sorted(xs)?;
    Ok(crate::agents::mean_and_sem(&v).0)
}

pub fn median(xs: &[f64]) -> Result<f64> {
    let v = sorted(xs)?;
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Interquartile mean.
///
/// The i-th order statistic (1-based) sits at percentile rank
/// `100 (i - 1/2) / n`; values ranked strictly below 25 or strictly above 75
/// are discarded and the rest averaged. For n = 4 this keeps the middle two,
/// for n = 5 the middle three.
pub fn iqm(xs: &[f64]) -> Result<f64> {
    let v = sorted(xs)?;
    let n = v.len();
    // 25 <= 100 (2i - 1) / 2n <= 75  <=>  n <= 2 (2i - 1) <= 3n
    let kept: Vec<f64> = v
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let r = 2 * (2 * (i + 1) - 1);
            n <= r && r <= 3 * n
        })
        .map(|(_, &x)| x)
        .collect();
    mean(&kept)
}

/// Standard error of the mean; `None` for a single value.
pub fn sem(xs: &[f64]) -> Result<Option<f64>> {
    let v = sorted(xs)?;
    if v.len() < 2 {
        return Ok(None);
    }
    Ok(Some(crate::agents::mean_and_sem(&v).1))
}

/// Centered moving average over `window` points (odd). Near the ends the
/// window is truncated to the points that exist, so the first and last
/// values average fewer neighbours.
pub fn smooth(xs: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = xs.len();
    (0..n)
        .map(|i| {
            let part = &xs[i.saturating_sub(half)..=(i + half).min(n - 1)];
            part.iter().sum::<f64>() / part.len() as f64
        })
        .collect()
}

/// Mann–Whitney U of `a` against `b` with midranks: the number of pairs with
/// `a > b` plus half the ties.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for &x in a {
        for &y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

/// One-sided p-value for `a` stochastically larger than `b`:
/// `P(U >= U_obs)` under random relabelling of the pooled sample.
///
/// Exact by enumerating every relabelling when there are at most 10^6 of
/// them, otherwise the tie-corrected normal approximation.
pub fn rank_sum_greater(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Aggregation("rank-sum test needs two nonempty samples".into()));
    }
    let observed = mann_whitney_u(a, b);
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (n, m) = (a.len(), b.len());
    let total = binomial(n + m, n);
    if total <= 1_000_000.0 {
        let mut hits = 0u64;
        let mut count = 0u64;
        let mut chosen = Vec::with_capacity(n);
        combinations(n + m, n, 0, &mut chosen, &mut |idx| {
            let mut in_a = vec![false; n + m];
            for &i in idx {
                in_a[i] = true;
            }
            let xa: Vec<f64> = (0..n + m).filter(|&i| in_a[i]).map(|i| pooled[i]).collect();
            let xb: Vec<f64> = (0..n + m).filter(|&i| !in_a[i]).map(|i| pooled[i]).collect();
            count += 1;
            // Half-integer U values are exact in f64; compare with a small guard anyway.
            if mann_whitney_u(&xa, &xb) >= observed - 1e-9 {
                hits += 1;
            }
        });
        return Ok(hits as f64 / count as f64);
    }
    let (nf, mf) = (n as f64, m as f64);
    let mut v = sorted(&pooled)?;
    v.dedup();
    let tie_term: f64 = v
        .iter()
        .map(|&x| {
            let t = pooled.iter().filter(|&&y| y == x).count() as f64;
            t * t * t - t
        })
        .sum();
    let big_n = nf + mf;
    let var = nf * mf / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
    if var <= 0.0 {
        return Ok(1.0);
    }
    let z = (observed - nf * mf / 2.0 - 0.5) / var.sqrt();
    Ok(0.5 * erfc(z / std::f64::consts::SQRT_2))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn combinations(n: usize, k: usize, start: usize, chosen: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    if chosen.len() == k {
        f(chosen);
        return;
    }
    for i in start..n {
        if n - i < k - chosen.len() {
            break;
        }
        chosen.push(i);
        combinations(n, k, i + 1, chosen, f);
        chosen.pop();
    }
}

/// Complementary error function (Numerical Recipes `erfcc`, |error| < 1.2e-7).
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418 + t * (-0.18628806 + t * (0.27886807 + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computable_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs).unwrap(), 2.5);
        assert_eq!(median(&xs).unwrap(), 2.5);
        assert_eq!(iqm(&xs).unwrap(), 2.5);
        assert_eq!(iqm(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap(), 3.0);
        assert_eq!(iqm(&[0.0, 5.0, 10.0]).unwrap(), 5.0);
        assert_eq!(iqm(&[7.0]).unwrap(), 7.0);
        assert_eq!(iqm(&[1.0, 3.0]).unwrap(), 2.0);
        assert_eq!(iqm(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap(), 4.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(sem(&[5.0]).unwrap(), None);
        assert!(mean(&[]).is_err());
    }

    #[test]
    fn smoothing_shrinks_at_edges() {
        assert_eq!(smooth(&[0.0, 3.0, 0.0, 3.0], 3), vec![1.5, 1.0, 2.0, 1.5]);
        assert_eq!(smooth(&[4.0], 3), vec![4.0]);
        assert_eq!(smooth(&[], 3), Vec::<f64>::new());
    }

    #[test]
    fn rank_sum_exact_values() {
        let a = [6.0, 7.0, 8.0, 9.0, 10.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(mann_whitney_u(&a, &b), 25.0);
        assert!((rank_sum_greater(&a, &b).unwrap() - 1.0 / 252.0).abs() < 1e-15);
        assert_eq!(rank_sum_greater(&b, &a).unwrap(), 1.0);
        let same = [1.0; 5];
        assert_eq!(rank_sum_greater(&same, &same).unwrap(), 1.0);
        // Four wins and one tie at zero: U = 22.5.
        let p = rank_sum_greater(&[1.0, 1.0, 1.0, 1.0, 0.0], &[0.0; 5]).unwrap();
        assert!(p < 0.05, "{p}");
    }

    #[test]
    fn normal_approximation_is_close_for_large_samples() {
        let a: Vec<f64> = (0..40).map(|i| i as f64 + 0.5).collect();
        let b: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let p = rank_sum_greater(&a, &b).unwrap();
        assert!(p > 0.3 && p < 0.5, "{p}");
        assert!((erfc(0.0) - 1.0).abs() < 1e-7);
        assert!((erfc(1.0) - 0.157_299_207_050_285).abs() < 2e-7);
    }

    proptest! {
        #[test]
        fn iqm_and_median_inside_sample_range(xs in proptest::collection::vec(-1e6f64..1e6, 1..30)) {
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let q = iqm(&xs).unwrap();
            let m = median(&xs).unwrap();
            prop_assert!(lo <= q && q <= hi);
            prop_assert!(lo <= m && m <= hi);
        }

        #[test]
        fn statistics_are_permutation_invariant(xs in proptest::collection::vec(-1e3f64..1e3, 1..20), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            let mut shuffled = xs.clone();
            shuffled.shuffle(&mut crate::rng::seeded(seed, 0));
            prop_assert_eq!(mean(&xs).unwrap(), mean(&shuffled).unwrap());
            prop_assert_eq!(iqm(&xs).unwrap(), iqm(&shuffled).unwrap());
            prop_assert_eq!(median(&xs).unwrap(), median(&shuffled).unwrap());
        }

        #[test]
        fn constant_samples_agree(x in -1e6f64..1e6, n in 1usize..25) {
            let xs = vec![x; n];
            prop_assert_eq!(mean(&xs).unwrap(), x);
            prop_assert_eq!(iqm(&xs).unwrap(), x);
            prop_assert_eq!(median(&xs).unwrap(), x);
        }
    }
}
