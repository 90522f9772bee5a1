//! Splits one noisy image into two half-resolution views that share the
//! signal but carry independent noise.
//!
//! Each non-overlapping 2x2 patch contributes the average of one diagonal
//! pair of pixels to the first view and the average of the other pair to the
//! second. Because every input pixel lands in exactly one output with weight
//! one half, and pixel noise is independent, the two views act like two noisy
//! observations of the same scene.
//!
//! Both views are produced by [`conv2d_forward`] with stride 2 and the fixed
//! 2x2 kernels
//!
//! ```text
//! k1 = | 0.0  0.5 |      k2 = | 0.5  0.0 |
//!      | 0.5  0.0 |           | 0.0  0.5 |
//! ```
//!
//! applied channel-wise. Odd trailing rows or columns fall outside the last
//! full patch and are dropped, which is exactly what a stride-2 valid
//! convolution does.

use crate::tensor::{conv2d_backward, conv2d_forward, ConvKernel, Elem, Result, Tensor, TensorError};

/// First fixed kernel, row-major: averages the anti-diagonal of each patch.
pub const KERNEL_1: [f64; 4] = [0.0, 0.5, 0.5, 0.0];
/// Second fixed kernel, row-major: averages the main diagonal of each patch.
pub const KERNEL_2: [f64; 4] = [0.5, 0.0, 0.0, 0.5];

/// The two half-resolution views of an image.
#[derive(Debug, Clone)]
pub struct DownsampledPair<T = f32> {
    pub first: Tensor<T>,
    pub second: Tensor<T>,
}

/// Embeds a single 2x2 tap as a channel-wise (depthwise) convolution: output
/// channel `c` sees only input channel `c`.
fn depthwise_kernel<T: Elem>(channels: usize, taps: &[f64; 4]) -> ConvKernel<T> {
    let mut weights = vec![T::zero(); channels * channels * 4];
    for c in 0..channels {
        for (t, &v) in taps.iter().enumerate() {
            weights[(c * channels + c) * 4 + t] = T::from_f64(v);
        }
    }
    ConvKernel::from_parts(channels, channels, 2, 2, weights, vec![T::zero(); channels])
        .expect("constructed lengths are consistent")
}

/// Produces the two stride-2 diagonal-average views of `y`.
///
/// Requires at least a 2x2 image; on odd dimensions the trailing row/column
/// is dropped.
pub fn downsample_pair<T: Elem>(y: &Tensor<T>) -> Result<DownsampledPair<T>> {
    let (c, h, w) = y.dims();
    if h < 2 || w < 2 {
        return Err(TensorError::TooSmall {
            min_h: 2,
            min_w: 2,
            height: h,
            width: w,
        });
    }
    let first = conv2d_forward(y, &depthwise_kernel(c, &KERNEL_1), 2, 0)?;
    let second = conv2d_forward(y, &depthwise_kernel(c, &KERNEL_2), 2, 0)?;
    Ok(DownsampledPair { first, second })
}

/// Adjoint of one downsampling view: scatters a half-resolution cotangent
/// back to full resolution. `which` selects the kernel (0 for the first view,
/// 1 for the second).
pub(crate) fn downsample_adjoint<T: Elem>(
    grad: &Tensor<T>,
    full_dims: (usize, usize, usize),
    which: usize,
) -> Result<Tensor<T>> {
    let taps = if which == 0 { &KERNEL_1 } else { &KERNEL_2 };
    let (c, h, w) = full_dims;
    let zero_input = Tensor::zeros(c, h, w);
    let grads = conv2d_backward(&zero_input, &depthwise_kernel(c, taps), grad, 2, 0)?;
    Ok(grads.input)
}
