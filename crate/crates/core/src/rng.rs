//! Seeded, splittable random streams with fully documented variate
//! generation, so any run is reproducible from `(seed, stream_id)` alone.
//!
//! The construction, in enough detail to re-derive every draw:
//!
//! * **Key expansion.** The 64-bit seed is expanded to a 32-byte key with
//!   SplitMix64: four successive outputs of `splitmix64(seed)`, each written
//!   little-endian.
//! * **Generator.** The key drives the ChaCha cipher with 8 rounds in counter
//!   mode; the 64-bit `stream_id` is the ChaCha nonce, so streams with
//!   different ids are independent cipher streams under the same key.
//! * **Uniforms.** `next_f64` takes the top 53 bits of a 64-bit draw:
//!   `(u >> 11) * 2^-53`, uniform on `[0, 1)`.
//! * **Normals.** Box–Muller on two uniforms: `r = sqrt(-2 ln(1-u1))`,
//!   `z0 = r cos(2*pi*u2)`, `z1 = r sin(2*pi*u2)`; `z1` is cached and
//!   returned by the next call.
//! * **Poisson.** Mean below 10 uses Knuth's product-of-uniforms inversion;
//!   larger means use the transformed-rejection sampler PTRS (Hörmann 1993).

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// SplitMix64 step (Steele, Lea, Flood 2014); mixes a 64-bit state into a
/// well-distributed output and advances it by the golden-ratio increment.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One deterministic pseudorandom stream. Streams with the same seed but
/// different `stream_id`s are statistically independent.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
    cached_normal: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut state = seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream_id);
        Self {
            rng,
            cached_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random mantissa bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[low, high)`.
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.next_f64()
    }

    /// Standard normal via Box–Muller; generates two variates per transform
    /// and hands out the cached one on alternate calls.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        // ln(1-u) keeps the argument strictly positive for u in [0,1).
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Poisson draw with the given mean.
    pub fn poisson(&mut self, mean: f64) -> u64 {
        assert!(mean >= 0.0 && mean.is_finite(), "poisson mean must be finite and non-negative");
        if mean == 0.0 {
            return 0;
        }
        if mean < 10.0 {
            self.poisson_inversion(mean)
        } else {
            self.poisson_ptrs(mean)
        }
    }

    /// Knuth's inversion: multiply uniforms until the product drops below
    /// exp(-mean). Expected number of uniforms is mean + 1.
    fn poisson_inversion(&mut self, mean: f64) -> u64 {
        let limit = (-mean).exp();
        let mut k = 0u64;
        let mut product = self.next_f64();
        while product > limit {
            k += 1;
            product *= self.next_f64();
        }
        k
    }

    /// Transformed rejection with squeeze (PTRS), valid for mean >= 10.
    fn poisson_ptrs(&mut self, mean: f64) -> u64 {
        let b = 0.931 + 2.53 * mean.sqrt();
        let a = -0.059 + 0.02483 * b;
        let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        let v_r = 0.9277 - 3.6224 / (b - 2.0);
        loop {
            let u = self.next_f64() - 0.5;
            let v = self.next_f64();
            let us = 0.5 - u.abs();
            let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
            if us >= 0.07 && v <= v_r {
                return k as u64;
            }
            if k < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            let lhs = (v * inv_alpha / (a / (us * us) + b)).ln();
            let rhs = -mean + k * mean.ln() - ln_factorial(k as u64);
            if lhs <= rhs {
                return k as u64;
            }
        }
    }
}

/// ln(k!) — exact product below 20, Stirling's series with the 1/(12k) and
/// 1/(360k^3) corrections above (relative error under 1e-12 there).
fn ln_factorial(k: u64) -> f64 {
    if k < 20 {
        let mut acc = 0.0f64;
        for i in 2..=k {
            acc += (i as f64).ln();
        }
        return acc;
    }
    let x = (k + 1) as f64;
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + 1.0 / (12.0 * x)
        - 1.0 / (360.0 * x * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_stream_repeat_exactly() {
        let a: Vec<u64> = {
            let mut r = RngStream::new(123, 5);
            (0..64).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = RngStream::new(123, 5);
            (0..64).map(|_| r.next_u64()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn different_streams_are_uncorrelated() {
        let n = 100_000;
        let mut r1 = RngStream::new(7, 0);
        let mut r2 = RngStream::new(7, 1);
        let xs: Vec<f64> = (0..n).map(|_| r1.next_f64() - 0.5).collect();
        let ys: Vec<f64> = (0..n).map(|_| r2.next_f64() - 0.5).collect();
        let dot: f64 = xs.iter().zip(&ys).map(|(a, b)| a * b).sum();
        let sx: f64 = xs.iter().map(|a| a * a).sum::<f64>().sqrt();
        let sy: f64 = ys.iter().map(|a| a * a).sum::<f64>().sqrt();
        let corr = dot / (sx * sy);
        assert!(corr.abs() < 0.01, "correlation {corr}");
    }

    #[test]
    fn normal_moments_within_four_sigma() {
        let n = 1_000_000usize;
        let mut rng = RngStream::new(2024, 0);
        let mut sum = 0.0f64;
        let mut sum_sq = 0.0f64;
        for _ in 0..n {
            let z = rng.normal();
            sum += z;
            sum_sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        // SE(mean) = 1/sqrt(n); SE(var) ~ sqrt(2/n) for a unit normal.
        let four_sigma_mean = 4.0 / (n as f64).sqrt();
        let four_sigma_var = 4.0 * (2.0 / n as f64).sqrt();
        assert!(mean.abs() < four_sigma_mean, "mean {mean}");
        assert!((var - 1.0).abs() < four_sigma_var, "var {var}");
    }

    #[test]
    fn uniform_autocorrelation_is_negligible() {
        let n = 1_000_000usize;
        let mut rng = RngStream::new(5, 0);
        let xs: Vec<f64> = (0..n).map(|_| rng.next_f64() - 0.5).collect();
        let mut dot = 0.0f64;
        let mut norm = 0.0f64;
        for i in 0..n - 1 {
            dot += xs[i] * xs[i + 1];
            norm += xs[i] * xs[i];
        }
        let lag1 = dot / norm;
        assert!(lag1.abs() < 0.01, "lag-1 autocorrelation {lag1}");
    }

    #[test]
    fn poisson_moments_match_both_samplers() {
        // Means on each side of the inversion/PTRS split.
        for &mean in &[3.0f64, 40.0] {
            let n = 200_000usize;
            let mut rng = RngStream::new(99, 2);
            let mut sum = 0.0f64;
            let mut sum_sq = 0.0f64;
            for _ in 0..n {
                let k = rng.poisson(mean) as f64;
                sum += k;
                sum_sq += k * k;
            }
            let m = sum / n as f64;
            let var = sum_sq / n as f64 - m * m;
            assert!((m - mean).abs() / mean < 0.02, "mean {m} for {mean}");
            assert!((var - mean).abs() / mean < 0.03, "var {var} for {mean}");
        }
    }

    #[test]
    fn poisson_zero_mean_is_zero() {
        let mut rng = RngStream::new(1, 0);
        for _ in 0..100 {
            assert_eq!(rng.poisson(0.0), 0);
        }
    }

    #[test]
    fn ln_factorial_matches_direct_sum() {
        for k in [0u64, 1, 5, 19, 20, 25, 100, 500] {
            let direct: f64 = (2..=k).map(|i| (i as f64).ln()).sum();
            let approx = ln_factorial(k);
            assert!(
                (direct - approx).abs() / direct.max(1.0) < 1e-10,
                "k={k}: {direct} vs {approx}"
            );
        }
    }
}
