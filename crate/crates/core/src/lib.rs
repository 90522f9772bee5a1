//! Zero-shot image denoising for single images: no training data, no noise
//! model, a ~22k-parameter network fitted from scratch to each input.
//!
//! The method rests on one observation: averaging the two diagonals of every
//! 2x2 patch splits a noisy image into two half-resolution views with nearly
//! identical signal but independent noise. Training a network to predict the
//! noise of one view from the other (with a consistency regularizer tying the
//! full-resolution image in) converges to a denoiser in one or two thousand
//! gradient steps, after which the estimate is simply `y - f(y)`.
//!
//! Modules:
//! - [`tensor`]: dense planar tensors and hand-written conv2d/ReLU
//!   forward-backward passes
//! - [`pair`]: the fixed stride-2 pair downsampler
//! - [`net`], [`loss`], [`optim`], [`fit`]: the network, the objective and
//!   its gradients, the optimizer, and the per-image fitting loop
//! - [`noise`], [`rng`]: reproducible noise synthesis and quality metrics
//!
//! ```
//! use noisepair::{add_noise, denoise, psnr, FitConfig, NoiseFamily, NoiseSpec, Tensor};
//!
//! // A smooth gradient stands in for a natural image here.
//! let clean = Tensor::from_vec(
//!     1, 32, 32,
//!     (0..32 * 32).map(|i| (i % 32) as f32 / 64.0 + 0.25).collect(),
//! )?;
//! let noisy = add_noise(&clean, &NoiseSpec {
//!     family: NoiseFamily::Gaussian,
//!     level: 25.0,
//!     seed: 7,
//! });
//! let config = FitConfig { iterations: 200, hidden_channels: 8, ..FitConfig::default() };
//! let (estimate, report) = denoise(&noisy, Some(&clean), &config)?;
//! assert_eq!(report.curve.len(), 200);
//! let gain = psnr(&estimate, &clean)?.psnr_db - psnr(&noisy, &clean)?.psnr_db;
//! assert!(gain > 0.0);
//! # Ok::<(), noisepair::TensorError>(())
//! ```

pub mod fit;
pub mod gradcheck;
pub mod loss;
pub mod net;
pub mod noise;
pub mod optim;
pub mod pair;
pub mod rng;
pub mod tensor;

pub use fit::{denoise, FitConfig, FitReport};
pub use gradcheck::{gradcheck_loss, GradCheckOutcome};
pub use loss::{loss_and_grad, loss_value, LossBreakdown, LossComputation, LossVariant};
pub use net::{init_params, network_forward, NetworkParams, DEFAULT_HIDDEN};
pub use noise::{add_noise, psnr, NoiseFamily, NoiseSpec, QualityMetrics};
pub use optim::{adam_step, AdamState};
pub use pair::{downsample_pair, DownsampledPair, KERNEL_1, KERNEL_2};
pub use rng::RngStream;
pub use tensor::{
    conv2d_backward, conv2d_forward, relu_backward, relu_forward, ConvGrads, ConvKernel, Elem,
    Tensor, TensorError,
};

/// `[0,1]`-normalized planar image; channels-first like every [`Tensor`].
pub type Image = Tensor<f32>;
