//! Finite-difference verification of the loss gradients in 64-bit
//! arithmetic.
//!
//! Central differences are only valid where the objective is smooth on the
//! whole evaluation interval, and ReLU makes the loss piecewise smooth: if
//! some pre-activation sits within the step size of zero, the two
//! evaluations land on different linear pieces and the comparison is
//! meaningless. The check therefore certifies its own step: it measures the
//! smallest pre-activation magnitude reachable by any forward pass the loss
//! makes (the kink margin) and the largest value multiplying any parameter
//! (which bounds how far a parameter step can move a pre-activation), then
//! picks `h` small enough that no interval can cross a kink.

use crate::loss::{loss_and_grad, loss_value, LossVariant};
use crate::net::{forward_trace, NetworkParams};
use crate::pair::downsample_pair;
use crate::tensor::{Result, Tensor};

/// Result of a finite-difference sweep over every parameter.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckOutcome {
    /// Largest relative error over all parameters, with denominator
    /// `max(|fd|, |analytic|, 1e-6)`.
    pub max_rel_error: f64,
    /// Step size used for the central differences.
    pub step: f64,
    /// Smallest pre-activation magnitude observed (the kink margin).
    pub margin: f64,
    /// Number of parameters checked.
    pub params_checked: usize,
}

/// Kink margin and input-magnitude bound over the three forward passes the
/// full loss makes.
fn kink_margin(params: &NetworkParams<f64>, y: &Tensor<f64>) -> Result<(f64, f64)> {
    let pair = downsample_pair(y)?;
    let mut margin = f64::INFINITY;
    let mut xmax: f64 = 1.0; // bias sensitivity is exactly 1
    for input in [&pair.first, &pair.second, y] {
        let trace = forward_trace(params, input)?;
        for v in trace.pre1.data().iter().chain(trace.pre2.data()) {
            margin = margin.min(v.abs());
        }
        for v in input
            .data()
            .iter()
            .chain(trace.act1.data())
            .chain(trace.act2.data())
        {
            xmax = xmax.max(v.abs());
        }
    }
    Ok((margin, xmax))
}

/// Sweeps central differences over every parameter of the loss at `params`
/// on image `y` and reports the worst relative error against the analytic
/// gradients.
///
/// `grad_perturbation` is a test hook: it is added to the first analytic
/// weight gradient before comparison, so a nonzero value must make the check
/// fail (negative control).
pub fn gradcheck_loss(
    params: &NetworkParams<f64>,
    y: &Tensor<f64>,
    variant: LossVariant,
    grad_perturbation: f64,
) -> Result<GradCheckOutcome> {
    let (margin, xmax) = kink_margin(params, y)?;
    // A parameter step of h moves any pre-activation by at most h * xmax;
    // a quarter of the margin leaves a 4x safety factor. The clamps keep h
    // inside the range where f64 central differences are accurate.
    let step = (margin / (4.0 * xmax)).clamp(1e-9, 1e-4);

    let base = loss_and_grad(params, y, variant)?;
    let mut analytic = base.grads;
    analytic.conv1.weights_mut()[0] += grad_perturbation;

    let mut max_rel_error = 0.0f64;
    let mut params_checked = 0usize;
    for buf_idx in 0..6 {
        let len = params.buffers()[buf_idx].len();
        for idx in 0..len {
            let mut plus = params.clone();
            plus.buffers_mut()[buf_idx][idx] += step;
            let mut minus = params.clone();
            minus.buffers_mut()[buf_idx][idx] -= step;
            let lp = loss_value(&plus, y, variant)?.total;
            let lm = loss_value(&minus, y, variant)?.total;
            let fd = (lp - lm) / (2.0 * step);
            let an = analytic.buffers()[buf_idx][idx];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            max_rel_error = max_rel_error.max(rel);
            params_checked += 1;
        }
    }
    Ok(GradCheckOutcome {
        max_rel_error,
        step,
        margin,
        params_checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::init_params;
    use crate::rng::RngStream;

    fn random_image(seed: u64) -> Tensor<f64> {
        let mut rng = RngStream::new(seed, 9);
        let data = (0..3 * 16 * 16).map(|_| rng.next_f64()).collect();
        Tensor::from_vec(3, 16, 16, data).unwrap()
    }

    #[test]
    fn passes_for_every_variant_on_a_small_network() {
        let y = random_image(11);
        let params = init_params::<f64>(3, 4, 3);
        for variant in [
            LossVariant::Full,
            LossVariant::NoSymmetric,
            LossVariant::NoConsistency,
            LossVariant::NoResidual,
        ] {
            let outcome = gradcheck_loss(&params, &y, variant, 0.0).unwrap();
            assert_eq!(outcome.params_checked, params.param_count());
            assert!(
                outcome.max_rel_error < 1e-4,
                "{variant:?}: {outcome:?}"
            );
        }
    }

    #[test]
    fn perturbed_gradient_fails() {
        let y = random_image(11);
        let params = init_params::<f64>(3, 4, 3);
        let outcome = gradcheck_loss(&params, &y, LossVariant::Full, 1e-2).unwrap();
        assert!(outcome.max_rel_error > 1e-4, "{outcome:?}");
    }
}
