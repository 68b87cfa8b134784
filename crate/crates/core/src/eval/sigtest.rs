use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PERMUTATIONS: u64 = 100_000;
/// Up to this many topics every sign assignment is enumerated.
pub const EXACT_CUTOFF: usize = 20;

/// Permutation statistics within this distance of the observed one count as
/// at least as extreme.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub p_value: f64,
    /// `mean(a − b)`
    pub mean_difference: f64,
    pub permutations: u64,
    pub exact: bool,
}

fn differences(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::invalid("the randomization test needs at least two pairs"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

/// Two-sided paired randomization test on `|mean(a − b)|`. Exact for up to
/// [`EXACT_CUTOFF`] pairs, otherwise Monte Carlo with `n_perm` draws.
pub fn randomization_test(a: &[f64], b: &[f64], n_perm: u64, seed: u64) -> Result<SignificanceResult> {
    if a.len() <= EXACT_CUTOFF {
        randomization_test_exact(a, b)
    } else {
        randomization_test_sampled(a, b, n_perm, seed)
    }
}

/// Enumerates all `2^n` sign flips; `p = #{stat ≥ observed} / 2^n`.
pub fn randomization_test_exact(a: &[f64], b: &[f64]) -> Result<SignificanceResult> {
    let d = differences(a, b)?;
    if d.len() > 30 {
        return Err(Error::invalid(format!("exact enumeration over {} pairs is infeasible", d.len())));
    }
    let n = d.len();
    let observed_sum: f64 = d.iter().sum();
    let observed = observed_sum.abs() / n as f64;
    let total = 1u64 << n;
    let mut extreme = 0u64;
    for mask in 0..total {
        let s: f64 = d
            .iter()
            .enumerate()
            .map(|(i, &v)| if mask >> i & 1 == 1 { -v } else { v })
            .sum();
        if s.abs() / n as f64 >= observed - TIE_TOLERANCE {
            extreme += 1;
        }
    }
    Ok(SignificanceResult {
        p_value: extreme as f64 / total as f64,
        mean_difference: observed_sum / n as f64,
        permutations: total,
        exact: true,
    })
}

/// Monte Carlo version: each draw flips every pair with probability ½;
/// `p = (#{stat ≥ observed} + 1) / (n_perm + 1)`.
pub fn randomization_test_sampled(a: &[f64], b: &[f64], n_perm: u64, seed: u64) -> Result<SignificanceResult> {
    let d = differences(a, b)?;
    if n_perm == 0 {
        return Err(Error::invalid("the sampled test needs at least one permutation"));
    }
    let n = d.len();
    let observed_sum: f64 = d.iter().sum();
    let observed = observed_sum.abs() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extreme = 0u64;
    for _ in 0..n_perm {
        let mut s = 0.0;
        let mut bits = 0u64;
        for (i, &v) in d.iter().enumerate() {
            if i % 64 == 0 {
                bits = rng.gen();
            }
            s += if bits & 1 == 1 { -v } else { v };
            bits >>= 1;
        }
        if s.abs() / n as f64 >= observed - TIE_TOLERANCE {
            extreme += 1;
        }
    }
    Ok(SignificanceResult {
        p_value: (extreme + 1) as f64 / (n_perm + 1) as f64,
        mean_difference: observed_sum / n as f64,
        permutations: n_perm,
        exact: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_samples() {
        let a = [0.3, 0.5, 0.1];
        assert_eq!(randomization_test(&a, &a, 1000, 0).unwrap().p_value, 1.0);
        let r = randomization_test_sampled(&a, &a, 1000, 0).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn two_topic_enumeration() {
        let r = randomization_test(&[1.0, 1.0], &[0.0, 0.0], 10, 0).unwrap();
        assert!(r.exact);
        assert_eq!(r.permutations, 4);
        assert_eq!(r.p_value, 0.5);
        assert_eq!(r.mean_difference, 1.0);
    }

    #[test]
    fn input_errors() {
        assert!(randomization_test(&[1.0, 2.0], &[1.0], 10, 0).is_err());
        assert!(randomization_test(&[1.0], &[1.0], 10, 0).is_err());
    }

    #[test]
    fn large_inputs_are_sampled_and_seeded() {
        let a: Vec<f64> = (0..30).map(|i| f64::from(i % 7) * 0.1).collect();
        let b: Vec<f64> = (0..30).map(|i| f64::from(i % 5) * 0.1).collect();
        let r1 = randomization_test(&a, &b, 2000, 42).unwrap();
        let r2 = randomization_test(&a, &b, 2000, 42).unwrap();
        assert!(!r1.exact);
        assert_eq!(r1, r2);
        assert!(r1.p_value > 0.0 && r1.p_value <= 1.0);
    }

    #[test]
    fn sampled_tracks_exact() {
        let a = [0.9, 0.4, 0.7, 0.3, 0.8, 0.55, 0.6, 0.2];
        let b = [0.5, 0.45, 0.3, 0.35, 0.4, 0.5, 0.1, 0.25];
        let exact = randomization_test_exact(&a, &b).unwrap().p_value;
        let sampled = randomization_test_sampled(&a, &b, 100_000, 7).unwrap().p_value;
        assert!((exact - sampled).abs() < 0.01, "{exact} vs {sampled}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn symmetric_and_bounded(pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..12)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let ab = randomization_test(&a, &b, 0, 0).unwrap();
            let ba = randomization_test(&b, &a, 0, 0).unwrap();
            prop_assert_eq!(ab.p_value, ba.p_value);
            prop_assert!(ab.p_value > 0.0 && ab.p_value <= 1.0);
        }
    }
}
