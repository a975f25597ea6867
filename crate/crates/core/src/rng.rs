//! Seeded random streams.
//!
//! Every consumer derives a ChaCha8 stream from `(seed, stream id)`, so block
//! `k` of a simulation draws the same numbers no matter how many threads run
//! or in which order blocks are scheduled. Normal variates use the inverse
//! normal CDF of a uniform in `(0, 1)`.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

pub type Stream = ChaCha8Rng;

pub fn stream(seed: u64, id: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Uniform in the open interval `(0, 1)`.
pub fn uniform(rng: &mut Stream) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

pub fn inv_norm_cdf(u: f64) -> f64 {
    Normal::standard().inverse_cdf(u)
}

pub fn normal(rng: &mut Stream) -> f64 {
    inv_norm_cdf(uniform(rng))
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Uniform index below `n`.
pub fn index(rng: &mut Stream, n: usize) -> usize {
    (uniform(rng) * n as f64) as usize % n.max(1)
}

/// Fisher–Yates shuffle driven by `rng`.
pub fn shuffle<T>(rng: &mut Stream, xs: &mut [T]) {
    for i in (1..xs.len()).rev() {
        let j = index(rng, i + 1);
        xs.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| stream(1, 0).next_u64()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        assert_ne!(stream(1, 0).next_u64(), stream(1, 1).next_u64());
    }

    #[test]
    fn uniform_open_interval() {
        let mut r = stream(3, 0);
        for _ in 0..10_000 {
            let u = uniform(&mut r);
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn normal_cdf_round_trip() {
        for &x in &[-3.0, -1.0, 0.0, 0.5, 2.5] {
            assert!((inv_norm_cdf(norm_cdf(x)) - x).abs() < 1e-8);
        }
        assert!((norm_cdf(0.1) - 0.539827837277029).abs() < 1e-14);
    }
}
