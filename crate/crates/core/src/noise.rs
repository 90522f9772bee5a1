//! Synthetic noise with the conventions used by the benchmarks, plus image
//! quality metrics.
//!
//! Gaussian levels are quoted in 8-bit pixel units: level 25 means standard
//! deviation `25/255` on `[0,1]`-normalized intensities. Poisson levels are
//! event-rate scales on `[0,1]`: `y = Poisson(level * x) / level` per entry,
//! so variance grows linearly with intensity (`Var[y] = x / level`).
//!
//! Noisy images are **not** clipped to `[0,1]`. Clipping would bias the
//! noise mean, and zero-mean noise is the one assumption the denoiser leans
//! on. Use the float image container for lossless interchange; only final
//! denoised estimates get clamped.

use serde::{Deserialize, Serialize};

use crate::rng::RngStream;
use crate::tensor::{Elem, Result, Tensor, TensorError};

/// Stream id reserved for noise synthesis draws.
pub const NOISE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Gaussian,
    Poisson,
}

/// A noise family, its level, and the seed that makes the draw reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    /// Sigma in 0–255 pixel units for Gaussian; the rate scale lambda for
    /// Poisson. Must be positive.
    pub level: f64,
    pub seed: u64,
}

/// Adds noise to a `[0,1]` image. Entries are visited in buffer order with
/// one variate each, so the output is deterministic for a given spec.
pub fn add_noise(x: &Tensor<f32>, spec: &NoiseSpec) -> Tensor<f32> {
    assert!(
        spec.level > 0.0 && spec.level.is_finite(),
        "noise level must be positive"
    );
    let mut rng = RngStream::new(spec.seed, NOISE_STREAM);
    let (c, h, w) = x.dims();
    let data = match spec.family {
        NoiseFamily::Gaussian => {
            let sigma = spec.level / 255.0;
            x.data()
                .iter()
                .map(|&v| v + (sigma * rng.normal()) as f32)
                .collect()
        }
        NoiseFamily::Poisson => {
            let lambda = spec.level;
            x.data()
                .iter()
                .map(|&v| (rng.poisson(lambda * v as f64) as f64 / lambda) as f32)
                .collect()
        }
    };
    Tensor::from_vec(c, h, w, data).expect("dims preserved")
}

/// MSE and PSNR between two images of identical dims, with the PSNR data
/// range fixed at 1.0 (equivalent to 255-range PSNR on 8-bit data).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityMetrics {
    pub mse: f64,
    /// `10 * log10(1 / mse)`; positive infinity when `mse == 0`.
    pub psnr_db: f64,
}

pub fn psnr<T: Elem>(a: &Tensor<T>, b: &Tensor<T>) -> Result<QualityMetrics> {
    if a.dims() != b.dims() {
        return Err(TensorError::DimMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    let mse = sum / a.len() as f64;
    let psnr_db = if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    };
    Ok(QualityMetrics { mse, psnr_db })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vanishing_sigma_is_identity() {
        let x = Tensor::full(3, 8, 8, 0.5f32);
        let spec = NoiseSpec {
            family: NoiseFamily::Gaussian,
            level: 1e-9,
            seed: 1,
        };
        let y = add_noise(&x, &spec);
        assert_eq!(y, x);
    }

    #[test]
    fn poisson_on_black_image_is_black() {
        let x = Tensor::<f32>::zeros(3, 8, 8);
        let spec = NoiseSpec {
            family: NoiseFamily::Poisson,
            level: 50.0,
            seed: 2,
        };
        let y = add_noise(&x, &spec);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_moments_match_the_level() {
        // 10^6 entries of sigma=25 noise on a constant image.
        let c = 0.5f32;
        let x = Tensor::full(1, 1000, 1000, c);
        let spec = NoiseSpec {
            family: NoiseFamily::Gaussian,
            level: 25.0,
            seed: 7,
        };
        let y = add_noise(&x, &spec);
        let n = y.len() as f64;
        let mean = y.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = y
            .data()
            .iter()
            .map(|&v| (v as f64 - mean) * (v as f64 - mean))
            .sum::<f64>()
            / n;
        let sigma = 25.0 / 255.0;
        assert!((mean - c as f64).abs() < 3.0 * sigma / 1000.0, "mean {mean}");
        assert!(
            (var.sqrt() - sigma).abs() / sigma < 0.01,
            "std {} vs {}",
            var.sqrt(),
            sigma
        );
    }

    #[test]
    fn gaussian_noise_uncorrelated_at_lag_one() {
        let x = Tensor::<f32>::zeros(1, 1000, 1000);
        let spec = NoiseSpec {
            family: NoiseFamily::Gaussian,
            level: 25.0,
            seed: 9,
        };
        let y = add_noise(&x, &spec);
        let vals = y.data();
        let mut dot = 0.0f64;
        let mut norm = 0.0f64;
        for i in 0..vals.len() - 1 {
            dot += vals[i] as f64 * vals[i + 1] as f64;
            norm += vals[i] as f64 * vals[i] as f64;
        }
        let lag1 = dot / norm;
        assert!(lag1.abs() < 0.01, "lag-1 autocorrelation {lag1}");
    }

    #[test]
    fn poisson_variance_tracks_intensity() {
        // Var[Poisson(lambda x)/lambda] = x/lambda; check at three
        // intensities with lambda = 50 and 10^5 draws each.
        let lambda = 50.0;
        for &intensity in &[0.25f32, 0.5, 1.0] {
            let x = Tensor::full(1, 250, 400, intensity);
            let spec = NoiseSpec {
                family: NoiseFamily::Poisson,
                level: lambda,
                seed: 13,
            };
            let y = add_noise(&x, &spec);
            let n = y.len() as f64;
            let mean = y.data().iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = y
                .data()
                .iter()
                .map(|&v| (v as f64 - mean) * (v as f64 - mean))
                .sum::<f64>()
                / n;
            let expected = intensity as f64 / lambda;
            assert!(
                (var - expected).abs() / expected < 0.05,
                "intensity {intensity}: var {var} vs {expected}"
            );
        }
    }

    #[test]
    fn psnr_known_values() {
        let a = Tensor::full(1, 4, 4, 0.25f64);
        let m = psnr(&a, &a).unwrap();
        assert_eq!(m.mse, 0.0);
        assert!(m.psnr_db.is_infinite() && m.psnr_db > 0.0);

        let b = a.map(|v| v + 0.1);
        let m = psnr(&a, &b).unwrap();
        assert!((m.mse - 0.01).abs() < 1e-9);
        assert!((m.psnr_db - 20.0).abs() < 1e-6);
    }

    #[test]
    fn psnr_matches_scalar_oracle_and_is_symmetric() {
        let mut rng = crate::rng::RngStream::new(21, 0);
        let a_data: Vec<f32> = (0..3 * 16 * 16).map(|_| rng.next_f64() as f32).collect();
        let b_data: Vec<f32> = (0..3 * 16 * 16).map(|_| rng.next_f64() as f32).collect();
        let a = Tensor::from_vec(3, 16, 16, a_data).unwrap();
        let b = Tensor::from_vec(3, 16, 16, b_data).unwrap();

        // Independent scalar-loop oracle.
        let mut acc = 0.0f64;
        let mut count = 0usize;
        for c in 0..3 {
            for y in 0..16 {
                for x in 0..16 {
                    let d = a.at(c, y, x) as f64 - b.at(c, y, x) as f64;
                    acc += d * d;
                    count += 1;
                }
            }
        }
        let oracle_mse = acc / count as f64;
        let oracle_psnr = 10.0 * (1.0 / oracle_mse).log10();

        let m = psnr(&a, &b).unwrap();
        assert!((m.mse - oracle_mse).abs() < 1e-9);
        assert!((m.psnr_db - oracle_psnr).abs() < 1e-9);

        let swapped = psnr(&b, &a).unwrap();
        assert_eq!(m, swapped);
    }

    #[test]
    fn psnr_rejects_dim_mismatch() {
        let a = Tensor::<f32>::zeros(1, 4, 4);
        let b = Tensor::<f32>::zeros(1, 4, 5);
        assert!(psnr(&a, &b).is_err());
    }
}
