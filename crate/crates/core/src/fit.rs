//! The per-image fitting loop: initialize a fresh network, descend the
//! objective for a fixed number of iterations, and return the residual
//! estimate. No training data, no early stopping — the consistency term in
//! the loss is what keeps long runs from degrading.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::loss::{loss_and_grad, LossBreakdown, LossVariant};
use crate::net::{init_params, network_forward, DEFAULT_HIDDEN};
use crate::optim::{adam_step, AdamState};
use crate::tensor::{Result, Tensor, TensorError};

/// Settings for one denoising run. The defaults are the tuned values used
/// throughout the benchmarks; they are resolution-independent because the
/// loss is a mean, not a sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Iterations at which the learning rate is halved (applied before that
    /// iteration's update).
    pub lr_halving_steps: Vec<usize>,
    pub seed: u64,
    pub loss_variant: LossVariant,
    pub hidden_channels: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            learning_rate: 1e-3,
            lr_halving_steps: vec![1000, 1500],
            seed: 0,
            loss_variant: LossVariant::Full,
            hidden_channels: DEFAULT_HIDDEN,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(TensorError::Config("iterations must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TensorError::Config("learning rate must be positive".into()));
        }
        if self.hidden_channels < 1 {
            return Err(TensorError::Config("hidden width must be at least 1".into()));
        }
        Ok(())
    }
}

/// What a fitting run produced besides the image: the loss curve, the
/// optional clean-MSE curve, and wall-clock timings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    /// One entry per iteration, evaluated at the parameters that iteration's
    /// update was computed from.
    pub curve: Vec<LossBreakdown>,
    /// MSE of the running estimate against the supplied ground truth, same
    /// convention as `curve`.
    pub clean_mse_curve: Option<Vec<f64>>,
    pub seconds_total: f64,
    pub seconds_per_100_iters: f64,
}

fn clamp01(t: &Tensor<f32>) -> Tensor<f32> {
    t.map(|v| v.clamp(0.0, 1.0))
}

fn mse(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    sum / a.len() as f64
}

/// Denoises a single image by fitting the network to it from scratch.
///
/// Returns the estimate (residual-subtracted unless the variant is
/// `NoResidual`, clamped to `[0, 1]`) and the run report. Supplying `clean`
/// adds a per-iteration clean-MSE curve to the report. Fully deterministic
/// for a given `(y, config)`.
pub fn denoise(
    y: &Tensor<f32>,
    clean: Option<&Tensor<f32>>,
    config: &FitConfig,
) -> Result<(Tensor<f32>, FitReport)> {
    config.validate()?;
    if !y.is_finite() {
        return Err(TensorError::NonFinite);
    }
    let (_, h, w) = y.dims();
    if h < 2 || w < 2 {
        return Err(TensorError::TooSmall {
            min_h: 2,
            min_w: 2,
            height: h,
            width: w,
        });
    }
    if let Some(c) = clean {
        if c.dims() != y.dims() {
            return Err(TensorError::DimMismatch {
                left: c.dims(),
                right: y.dims(),
            });
        }
    }

    let start = Instant::now();
    let mut params = init_params::<f32>(y.channels(), config.hidden_channels, config.seed);
    let mut state = AdamState::new(&params);
    let mut lr = config.learning_rate;
    let mut curve = Vec::with_capacity(config.iterations);
    let mut clean_curve = clean.map(|_| Vec::with_capacity(config.iterations));

    for iter in 1..=config.iterations {
        if config.lr_halving_steps.contains(&iter) {
            lr *= 0.5;
        }
        let comp = loss_and_grad(&params, y, config.loss_variant)?;
        curve.push(comp.breakdown);
        if let (Some(cc), Some(clean)) = (clean_curve.as_mut(), clean) {
            let f_y = match &comp.full_output {
                Some(out) => out.clone(),
                None => network_forward(&params, y)?,
            };
            let estimate = if config.loss_variant.is_residual() {
                clamp01(&y.sub(&f_y)?)
            } else {
                clamp01(&f_y)
            };
            cc.push(mse(&estimate, clean));
        }
        adam_step(&mut params, &comp.grads, &mut state, lr);
    }

    let f_y = network_forward(&params, y)?;
    let estimate = if config.loss_variant.is_residual() {
        clamp01(&y.sub(&f_y)?)
    } else {
        clamp01(&f_y)
    };
    let seconds_total = start.elapsed().as_secs_f64();
    let report = FitReport {
        curve,
        clean_mse_curve: clean_curve,
        seconds_total,
        seconds_per_100_iters: seconds_total * 100.0 / config.iterations as f64,
    };
    Ok((estimate, report))
}
