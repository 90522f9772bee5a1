//! The fitting objective and its exact gradients.
//!
//! With `D1`, `D2` the pair downsampler views and `f` the network, the full
//! objective is the sum of a symmetric residual term and a symmetric
//! consistency term, each a mean-squared error over the half-resolution
//! grid:
//!
//! ```text
//! L_res  = 1/2 ( mse(D1(y) - f(D1(y)) - D2(y)) + mse(D2(y) - f(D2(y)) - D1(y)) )
//! L_cons = 1/2 ( mse(D1(y) - f(D1(y)) - D1(y - f(y)))
//!              + mse(D2(y) - f(D2(y)) - D2(y - f(y))) )
//! L      = L_res + L_cons
//! ```
//!
//! The residual term trains `f` to predict the noise of one view given the
//! other; the consistency term demands that denoise-then-downsample agree
//! with downsample-then-denoise, which regularizes against overfitting the
//! single image. Means (rather than raw sums of squares) make the learning
//! rate independent of resolution; the minimizer is unaffected.
//!
//! The ablation variants drop one ingredient each; see [`LossVariant`].

use serde::{Deserialize, Serialize};

use crate::net::{backward_trace, forward_trace, NetworkParams};
use crate::pair::{downsample_adjoint, downsample_pair};
use crate::tensor::{Elem, Result, Tensor};

/// Which terms of the objective to use. `Full` is the default; the others
/// exist for ablation studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossVariant {
    /// Symmetric residual + symmetric consistency.
    Full,
    /// First-ordering terms only: residual and consistency without the
    /// swapped copies.
    NoSymmetric,
    /// Symmetric residual alone.
    NoConsistency,
    /// Direct prediction `mse(f(D1(y)) - D2(y))` (symmetrized) — the network
    /// predicts the image instead of the noise and the estimate becomes
    /// `f(y)` rather than `y - f(y)`.
    NoResidual,
}

impl LossVariant {
    /// Whether the denoised estimate is `y - f(y)` (residual learning) or
    /// `f(y)` directly.
    pub fn is_residual(self) -> bool {
        !matches!(self, LossVariant::NoResidual)
    }
}

/// Loss values for one iteration. `total` is exactly
/// `residual + consistency` in the accumulation order used here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub residual: f64,
    pub consistency: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn new(residual: f64, consistency: f64) -> Self {
        Self {
            residual,
            consistency,
            total: residual + consistency,
        }
    }
}

/// Result of one loss evaluation: the values, exact parameter gradients, and
/// (when the variant required evaluating it) the full-resolution network
/// output `f(y)` for reuse by the caller.
#[derive(Debug, Clone)]
pub struct LossComputation<T = f32> {
    pub breakdown: LossBreakdown,
    pub grads: NetworkParams<T>,
    pub full_output: Option<Tensor<T>>,
}

fn sum_sq<T: Elem>(t: &Tensor<T>) -> f64 {
    t.data().iter().map(|v| v.as_f64() * v.as_f64()).sum()
}

/// `a - b - c` elementwise.
fn residual3<T: Elem>(a: &Tensor<T>, b: &Tensor<T>, c: &Tensor<T>) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .zip(c.data())
        .map(|((&a, &b), &c)| a - b - c)
        .collect();
    Tensor::from_vec(a.channels(), a.height(), a.width(), data).expect("dims match")
}

/// `(a + b) * s` elementwise.
fn scaled_sum<T: Elem>(a: &Tensor<T>, b: &Tensor<T>, s: T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&a, &b)| (a + b) * s)
        .collect();
    Tensor::from_vec(a.channels(), a.height(), a.width(), data).expect("dims match")
}

/// Loss values only, no gradients. This is what finite-difference harnesses
/// probe; it shares the forward code with [`loss_and_grad`] but none of the
/// backward path it is used to verify.
pub fn loss_value<T: Elem>(
    params: &NetworkParams<T>,
    y: &Tensor<T>,
    variant: LossVariant,
) -> Result<LossBreakdown> {
    let pair = downsample_pair(y)?;
    let d1 = &pair.first;
    let d2 = &pair.second;
    let n = d1.len() as f64;

    let f1 = crate::net::network_forward(params, d1)?;
    match variant {
        LossVariant::Full | LossVariant::NoSymmetric => {
            let fy = crate::net::network_forward(params, y)?;
            let denoised = y.sub(&fy)?;
            let dhat = downsample_pair(&denoised)?;
            let r1 = residual3(d1, &f1, d2);
            let c1 = residual3(d1, &f1, &dhat.first);
            if variant == LossVariant::NoSymmetric {
                return Ok(LossBreakdown::new(sum_sq(&r1) / n, sum_sq(&c1) / n));
            }
            let f2 = crate::net::network_forward(params, d2)?;
            let r2 = residual3(d2, &f2, d1);
            let c2 = residual3(d2, &f2, &dhat.second);
            Ok(LossBreakdown::new(
                0.5 * (sum_sq(&r1) + sum_sq(&r2)) / n,
                0.5 * (sum_sq(&c1) + sum_sq(&c2)) / n,
            ))
        }
        LossVariant::NoConsistency => {
            let f2 = crate::net::network_forward(params, d2)?;
            let r1 = residual3(d1, &f1, d2);
            let r2 = residual3(d2, &f2, d1);
            Ok(LossBreakdown::new(
                0.5 * (sum_sq(&r1) + sum_sq(&r2)) / n,
                0.0,
            ))
        }
        LossVariant::NoResidual => {
            let f2 = crate::net::network_forward(params, d2)?;
            let p1 = f1.sub(d2)?;
            let p2 = f2.sub(d1)?;
            Ok(LossBreakdown::new(
                0.5 * (sum_sq(&p1) + sum_sq(&p2)) / n,
                0.0,
            ))
        }
    }
}

/// Evaluates the chosen loss variant at `params` on the noisy image `y` and
/// returns its exact gradients.
pub fn loss_and_grad<T: Elem>(
    params: &NetworkParams<T>,
    y: &Tensor<T>,
    variant: LossVariant,
) -> Result<LossComputation<T>> {
    let pair = downsample_pair(y)?;
    let d1 = &pair.first;
    let d2 = &pair.second;
    let n = d1.len();
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut grads = params.zeros_like();

    match variant {
        LossVariant::Full => {
            let t1 = forward_trace(params, d1)?;
            let t2 = forward_trace(params, d2)?;
            let ty = forward_trace(params, y)?;
            let denoised = y.sub(&ty.output)?;
            let dhat = downsample_pair(&denoised)?;

            let r1 = residual3(d1, &t1.output, d2);
            let r2 = residual3(d2, &t2.output, d1);
            let c1 = residual3(d1, &t1.output, &dhat.first);
            let c2 = residual3(d2, &t2.output, &dhat.second);

            let residual = 0.5 * (sum_sq(&r1) + sum_sq(&r2)) / n as f64;
            let consistency = 0.5 * (sum_sq(&c1) + sum_sq(&c2)) / n as f64;

            // d L / d f(dk) = -(1/n) (rk + ck); the 1/2 cancels against the
            // squared-norm derivative.
            let neg_inv_n = T::zero() - inv_n;
            let cot1 = scaled_sum(&r1, &c1, neg_inv_n);
            let cot2 = scaled_sum(&r2, &c2, neg_inv_n);
            backward_trace(params, d1, &t1, &cot1, &mut grads)?;
            backward_trace(params, d2, &t2, &cot2, &mut grads)?;

            // d L / d f(y) = D1^T((1/n) c1) + D2^T((1/n) c2).
            let up1 = downsample_adjoint(&c1.map(|v| v * inv_n), y.dims(), 0)?;
            let up2 = downsample_adjoint(&c2.map(|v| v * inv_n), y.dims(), 1)?;
            let mut coty = up1;
            for (d, &s) in coty.data_mut().iter_mut().zip(up2.data()) {
                *d += s;
            }
            backward_trace(params, y, &ty, &coty, &mut grads)?;

            Ok(LossComputation {
                breakdown: LossBreakdown::new(residual, consistency),
                grads,
                full_output: Some(ty.output),
            })
        }
        LossVariant::NoSymmetric => {
            let t1 = forward_trace(params, d1)?;
            let ty = forward_trace(params, y)?;
            let denoised = y.sub(&ty.output)?;
            let dhat = downsample_pair(&denoised)?;

            let r1 = residual3(d1, &t1.output, d2);
            let c1 = residual3(d1, &t1.output, &dhat.first);
            let residual = sum_sq(&r1) / n as f64;
            let consistency = sum_sq(&c1) / n as f64;

            // No 1/2 here, so the cotangent picks up a factor of 2.
            let scale = T::zero() - (inv_n + inv_n);
            let cot1 = scaled_sum(&r1, &c1, scale);
            backward_trace(params, d1, &t1, &cot1, &mut grads)?;

            let coty = downsample_adjoint(&c1.map(|v| (v + v) * inv_n), y.dims(), 0)?;
            backward_trace(params, y, &ty, &coty, &mut grads)?;

            Ok(LossComputation {
                breakdown: LossBreakdown::new(residual, consistency),
                grads,
                full_output: Some(ty.output),
            })
        }
        LossVariant::NoConsistency => {
            let t1 = forward_trace(params, d1)?;
            let t2 = forward_trace(params, d2)?;
            let r1 = residual3(d1, &t1.output, d2);
            let r2 = residual3(d2, &t2.output, d1);
            let residual = 0.5 * (sum_sq(&r1) + sum_sq(&r2)) / n as f64;

            let neg_inv_n = T::zero() - inv_n;
            let cot1 = r1.map(|v| v * neg_inv_n);
            let cot2 = r2.map(|v| v * neg_inv_n);
            backward_trace(params, d1, &t1, &cot1, &mut grads)?;
            backward_trace(params, d2, &t2, &cot2, &mut grads)?;

            Ok(LossComputation {
                breakdown: LossBreakdown::new(residual, 0.0),
                grads,
                full_output: None,
            })
        }
        LossVariant::NoResidual => {
            let t1 = forward_trace(params, d1)?;
            let t2 = forward_trace(params, d2)?;
            let p1 = t1.output.sub(d2)?;
            let p2 = t2.output.sub(d1)?;
            let residual = 0.5 * (sum_sq(&p1) + sum_sq(&p2)) / n as f64;

            let cot1 = p1.map(|v| v * inv_n);
            let cot2 = p2.map(|v| v * inv_n);
            backward_trace(params, d1, &t1, &cot1, &mut grads)?;
            backward_trace(params, d2, &t2, &cot2, &mut grads)?;

            Ok(LossComputation {
                breakdown: LossBreakdown::new(residual, 0.0),
                grads,
                full_output: None,
            })
        }
    }
}
