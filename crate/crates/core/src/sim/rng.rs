//! Reproducible randomness: one ChaCha8 counter-based generator per named
//! stream, so parallel consumers draw from disjoint, worker-count-independent
//! sequences.
//!
//! Stream allocation used by this crate:
//!   0            multinomial event sampling
//!   1 + b        speckle-oracle realization block b
//!   1000 + r     per-realization streams of Monte Carlo estimator studies

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::scalar::Scalar;

/// Generator for (seed, stream).
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One multinomial draw of `n` trials over `probs` (need not be exactly
/// normalized; the conditional-binomial construction uses the remaining mass).
/// Counts sum to `n` exactly.
pub fn multinomial<T: Scalar>(rng: &mut ChaCha8Rng, n: u64, probs: &[T]) -> Vec<u64> {
    let mut counts = vec![0u64; probs.len()];
    let mut remaining_n = n;
    let mut remaining_p: f64 = probs.iter().map(|&p| p.to_f64_lossy()).sum();
    for (k, &p) in probs.iter().enumerate() {
        if remaining_n == 0 {
            break;
        }
        if k + 1 == probs.len() {
            counts[k] = remaining_n;
            break;
        }
        let pf = p.to_f64_lossy();
        let ratio = if remaining_p > 0.0 { (pf / remaining_p).clamp(0.0, 1.0) } else { 0.0 };
        let draw = if ratio >= 1.0 {
            remaining_n
        } else if ratio <= 0.0 {
            0
        } else {
            Binomial::new(remaining_n, ratio).expect("valid binomial").sample(rng)
        };
        counts[k] = draw;
        remaining_n -= draw;
        remaining_p -= pf;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_disjoint_and_reproducible() {
        use rand::RngCore;
        let mut a = stream_rng(7, 0);
        let mut b = stream_rng(7, 1);
        let mut a2 = stream_rng(7, 0);
        let va: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let vb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let va2: Vec<u64> = (0..8).map(|_| a2.next_u64()).collect();
        assert_eq!(va, va2);
        assert_ne!(va, vb);
    }

    #[test]
    fn multinomial_counts_close() {
        let probs = vec![0.5f64, 0.25, 0.125, 0.125];
        let mut rng = stream_rng(3, 0);
        let counts = multinomial(&mut rng, 100_000, &probs);
        assert_eq!(counts.iter().sum::<u64>(), 100_000);
        for (c, p) in counts.iter().zip(&probs) {
            let f = *c as f64 / 1e5;
            assert!((f - p).abs() < 0.01, "frequency {f} far from {p}");
        }
    }

    #[test]
    fn multinomial_point_mass() {
        let probs = vec![1.0f64, 0.0, 0.0];
        let mut rng = stream_rng(1, 0);
        let counts = multinomial(&mut rng, 1234, &probs);
        assert_eq!(counts, vec![1234, 0, 0]);
    }

    #[test]
    fn multinomial_chi_square_over_seeds() {
        // goodness of fit at the 1% level over repeated seeds: allow at most
        // 3 of 20 exceedances of the critical value (expected ~0.2)
        let probs = vec![0.3f64, 0.25, 0.2, 0.15, 0.1];
        let n = 50_000u64;
        let dof = probs.len() as f64 - 1.0;
        // Wilson-Hilferty chi^2 critical value at 0.99
        let z = 2.3263478740408408f64;
        let crit = dof * (1.0 - 2.0 / (9.0 * dof) + z * (2.0 / (9.0 * dof)).sqrt()).powi(3);
        let mut exceed = 0;
        for seed in 0..20 {
            let mut rng = stream_rng(seed, 0);
            let counts = multinomial(&mut rng, n, &probs);
            let chi2: f64 = counts
                .iter()
                .zip(&probs)
                .map(|(&c, &p)| {
                    let e = p * n as f64;
                    (c as f64 - e) * (c as f64 - e) / e
                })
                .sum();
            if chi2 > crit {
                exceed += 1;
            }
        }
        assert!(exceed <= 3, "{exceed} of 20 seeds exceeded the 1% critical value");
    }
}
