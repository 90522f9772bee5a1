//! Dense planar tensors plus hand-written forward and backward passes for the
//! two operators the denoising network needs: 2-D convolution and ReLU.
//!
//! Layout is channel-major planar: the buffer stores channel 0's full plane,
//! then channel 1's, and so on, each plane in row-major order. Convolution is
//! cross-correlation (no kernel flip) with zero padding, the usual deep
//! learning convention.
//!
//! Everything is generic over [`Elem`]. Denoising runs use `f32`; the `f64`
//! instantiation exists for the finite-difference gradient harnesses, which
//! need the extra precision.

use std::fmt;

use thiserror::Error;

/// Errors from shape validation in tensor and convolution operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("data length {got} does not match dims {channels}x{height}x{width} (expected {expected})")]
    DataLength {
        channels: usize,
        height: usize,
        width: usize,
        expected: usize,
        got: usize,
    },
    #[error("input has {input} channels but kernel expects {kernel}")]
    ChannelMismatch { input: usize, kernel: usize },
    #[error("tensor dims {left:?} and {right:?} do not match")]
    DimMismatch {
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },
    #[error("convolution of {height}x{width} input with {kernel_h}x{kernel_w} kernel (stride {stride}, padding {padding}) yields an empty output")]
    EmptyOutput {
        height: usize,
        width: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    },
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("weights length {weights_got} or bias length {bias_got} does not match kernel dims {out}x{inp}x{kh}x{kw}")]
    KernelLength {
        out: usize,
        inp: usize,
        kh: usize,
        kw: usize,
        weights_got: usize,
        bias_got: usize,
    },
    #[error("image must be at least {min_h}x{min_w}, got {height}x{width}")]
    TooSmall {
        min_h: usize,
        min_w: usize,
        height: usize,
        width: usize,
    },
    #[error("tensor contains a non-finite value")]
    NonFinite,
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Scalar type for tensor math. `f32` for denoising runs, `f64` for the
/// gradient-check harnesses.
pub trait Elem:
    num_traits::Float + num_traits::NumAssignOps + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    /// Row-major GEMM: `c = alpha * a * b + beta * c` with strided `a`, `b`, `c`.
    ///
    /// # Safety
    /// The pointers with their row/column strides must describe valid
    /// `m x k`, `k x n`, and `m x n` matrices.
    unsafe fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Elem for f32 {
    unsafe fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Elem for f64 {
    unsafe fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense C x H x W tensor in channel-major planar order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Elem> Tensor<T> {
    /// Builds a tensor from a flat buffer; the length must equal `c * h * w`.
    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(TensorError::DataLength {
                channels,
                height,
                width,
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn full(channels: usize, height: usize, width: usize, value: T) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// The plane of one channel as a row-major slice.
    pub fn channel(&self, c: usize) -> &[T] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn mean(&self) -> T {
        let n = T::from_f64(self.data.len() as f64);
        self.data.iter().fold(T::zero(), |acc, &v| acc + v) / n
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.dims() != other.dims() {
            return Err(TensorError::DimMismatch {
                left: self.dims(),
                right: other.dims(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        })
    }

    /// Converts element type, rounding through `f64`.
    pub fn cast<U: Elem>(&self) -> Tensor<U> {
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Convolution kernel: weights laid out `[out][in][kh][kw]`, one bias per
/// output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<T = f32> {
    out_channels: usize,
    in_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    weights: Vec<T>,
    bias: Vec<T>,
}

impl<T: Elem> ConvKernel<T> {
    pub fn from_parts(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        weights: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        if weights.len() != out_channels * in_channels * kernel_h * kernel_w
            || bias.len() != out_channels
        {
            return Err(TensorError::KernelLength {
                out: out_channels,
                inp: in_channels,
                kh: kernel_h,
                kw: kernel_w,
                weights_got: weights.len(),
                bias_got: bias.len(),
            });
        }
        Ok(Self {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            weights,
            bias,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kernel_h: usize, kernel_w: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            weights: vec![T::zero(); out_channels * in_channels * kernel_h * kernel_w],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// `(kernel_h, kernel_w)`.
    pub fn kernel_dims(&self) -> (usize, usize) {
        (self.kernel_h, self.kernel_w)
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    /// Disjoint mutable views of the weight and bias buffers.
    pub fn weights_bias_mut(&mut self) -> (&mut [T], &mut [T]) {
        (&mut self.weights, &mut self.bias)
    }

    #[inline]
    pub fn weight_at(&self, o: usize, i: usize, ky: usize, kx: usize) -> T {
        self.weights[((o * self.in_channels + i) * self.kernel_h + ky) * self.kernel_w + kx]
    }

    /// Number of trainable scalars (weights plus biases).
    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Kernel of identical shape with all-zero weights and bias.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)
    }

    pub fn cast<U: Elem>(&self) -> ConvKernel<U> {
        ConvKernel {
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            kernel_h: self.kernel_h,
            kernel_w: self.kernel_w,
            weights: self.weights.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            bias: self.bias.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Gradients of a convolution: with respect to the input tensor and to the
/// kernel (weight and bias grads share the kernel's shape).
#[derive(Debug, Clone)]
pub struct ConvGrads<T = f32> {
    pub input: Tensor<T>,
    pub kernel: ConvKernel<T>,
}

fn conv_output_dims<T: Elem>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(TensorError::ZeroStride);
    }
    if input.channels() != kernel.in_channels {
        return Err(TensorError::ChannelMismatch {
            input: input.channels(),
            kernel: kernel.in_channels,
        });
    }
    let (h, w) = (input.height(), input.width());
    let (kh, kw) = (kernel.kernel_h, kernel.kernel_w);
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(TensorError::EmptyOutput {
            height: h,
            width: w,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
        });
    }
    let out_h = (h + 2 * padding - kh) / stride + 1;
    let out_w = (w + 2 * padding - kw) / stride + 1;
    Ok((out_h, out_w))
}

/// Zero-padded cross-correlation of `input` with `kernel`, plus bias.
///
/// Output dims are `floor((H + 2*pad - kh) / stride) + 1` by the analogous
/// width formula. Larger problems route through an im2col + GEMM path; tiny
/// ones use direct loops. Both are deterministic for fixed shapes.
pub fn conv2d_forward<T: Elem>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (out_h, out_w) = conv_output_dims(input, kernel, stride, padding)?;
    if use_gemm_path(kernel, stride, padding, out_h, out_w) {
        conv2d_forward_gemm(input, kernel, stride, padding, out_h, out_w)
    } else {
        conv2d_forward_direct(input, kernel, stride, padding, out_h, out_w)
    }
}

/// Per-pixel MAC count decides the path; im2col pays off once the GEMM is
/// meaningfully sized, and 1x1 stride-1 convolutions skip the im2col
/// entirely so they take the GEMM path at much smaller sizes.
fn use_gemm_path<T: Elem>(
    kernel: &ConvKernel<T>,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
) -> bool {
    let work_per_px =
        kernel.out_channels * kernel.in_channels * kernel.kernel_h * kernel.kernel_w;
    let one_by_one =
        kernel.kernel_h == 1 && kernel.kernel_w == 1 && stride == 1 && padding == 0;
    out_h * out_w >= 64 && (work_per_px >= 512 || (one_by_one && work_per_px >= 32))
}

/// Reference direct-loop convolution; the accumulation order is input
/// channel, then kernel row, then kernel column.
fn conv2d_forward_direct<T: Elem>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let (_, h, w) = input.dims();
    let (kh, kw) = kernel.kernel_dims();
    let mut out = Tensor::zeros(kernel.out_channels, out_h, out_w);
    for o in 0..kernel.out_channels {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = kernel.bias[o];
                for i in 0..kernel.in_channels {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += kernel.weight_at(o, i, ky, kx)
                                * input.at(i, iy as usize, ix as usize);
                        }
                    }
                }
                out.set(o, oy, ox, acc);
            }
        }
    }
    Ok(out)
}

// Output positions are tiled so the im2col scratch stays cache-sized
// regardless of image size.
const COL_TILE: usize = 4096;

/// Fills `cols` (row-major `K x tile_n`, `K = in*kh*kw`) for output positions
/// `[n0, n0 + tile_n)`.
fn fill_cols<T: Elem>(
    input: &Tensor<T>,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_w: usize,
    n0: usize,
    tile_n: usize,
    cols: &mut [T],
) {
    let (in_c, h, w) = input.dims();
    debug_assert_eq!(cols.len(), in_c * kh * kw * tile_n);
    for (row_idx, row) in cols.chunks_exact_mut(tile_n).enumerate() {
        let i = row_idx / (kh * kw);
        let ky = (row_idx / kw) % kh;
        let kx = row_idx % kw;
        let plane = input.channel(i);
        let mut n = 0usize;
        while n < tile_n {
            let p = n0 + n;
            let oy = p / out_w;
            let ox0 = p % out_w;
            // Positions sharing this output row form one contiguous run.
            let run = (out_w - ox0).min(tile_n - n);
            let iy = (oy * stride + ky) as isize - padding as isize;
            let seg = &mut row[n..n + run];
            if iy < 0 || iy >= h as isize {
                seg.fill(T::zero());
            } else {
                let in_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                if stride == 1 {
                    // ix = ox + kx - padding over a contiguous span; split into
                    // left zeros, a straight copy, and right zeros.
                    let ix0 = ox0 as isize + kx as isize - padding as isize;
                    let left = (-ix0).clamp(0, run as isize) as usize;
                    let valid_end = (w as isize - ix0).clamp(0, run as isize) as usize;
                    seg[..left].fill(T::zero());
                    if valid_end > left {
                        let src0 = (ix0 + left as isize) as usize;
                        seg[left..valid_end]
                            .copy_from_slice(&in_row[src0..src0 + (valid_end - left)]);
                    }
                    seg[valid_end.max(left)..].fill(T::zero());
                } else {
                    for (j, dst) in seg.iter_mut().enumerate() {
                        let ix =
                            ((ox0 + j) * stride + kx) as isize - padding as isize;
                        *dst = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            in_row[ix as usize]
                        };
                    }
                }
            }
            n += run;
        }
    }
}

fn conv2d_forward_gemm<T: Elem>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let m = kernel.out_channels;
    let (kh, kw) = kernel.kernel_dims();
    let k = kernel.in_channels * kh * kw;
    let n = out_h * out_w;
    let mut out = Tensor::<T>::zeros(m, out_h, out_w);

    let one_by_one = kh == 1 && kw == 1 && stride == 1 && padding == 0;
    let mut cols = if one_by_one {
        Vec::new()
    } else {
        vec![T::zero(); k * COL_TILE.min(n)]
    };

    let mut n0 = 0usize;
    while n0 < n {
        let tile_n = COL_TILE.min(n - n0);
        let (b_ptr, rsb) = if one_by_one {
            // A 1x1 stride-1 convolution's column matrix is the input itself.
            (unsafe { input.data().as_ptr().add(n0) }, n as isize)
        } else {
            fill_cols(
                input,
                kh,
                kw,
                stride,
                padding,
                out_w,
                n0,
                tile_n,
                &mut cols[..k * tile_n],
            );
            (cols.as_ptr(), tile_n as isize)
        };
        unsafe {
            T::gemm_strided(
                m,
                k,
                tile_n,
                T::one(),
                kernel.weights.as_ptr(),
                k as isize,
                1,
                b_ptr,
                rsb,
                1,
                T::zero(),
                out.data_mut().as_mut_ptr().add(n0),
                n as isize,
                1,
            );
        }
        n0 += tile_n;
    }

    for o in 0..m {
        let b = kernel.bias[o];
        if b != T::zero() {
            for v in &mut out.data_mut()[o * n..(o + 1) * n] {
                *v += b;
            }
        }
    }
    Ok(out)
}

/// Exact gradients of [`conv2d_forward`] with respect to the input, weights,
/// and bias, given the cotangent `grad_output`.
pub fn conv2d_backward<T: Elem>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
    grad_output: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGrads<T>> {
    let (grad_input, grads) = conv2d_backward_inner(input, kernel, grad_output, stride, padding, true)?;
    Ok(ConvGrads {
        input: grad_input.expect("requested"),
        kernel: grads,
    })
}

/// Weight and bias gradients only; used for the first layer, whose input
/// gradient nobody consumes.
pub(crate) fn conv2d_backward_params_only<T: Elem>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
    grad_output: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvKernel<T>> {
    Ok(conv2d_backward_inner(input, kernel, grad_output, stride, padding, false)?.1)
}

fn conv2d_backward_inner<T: Elem>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
    grad_output: &Tensor<T>,
    stride: usize,
    padding: usize,
    need_input: bool,
) -> Result<(Option<Tensor<T>>, ConvKernel<T>)> {
    let (out_h, out_w) = conv_output_dims(input, kernel, stride, padding)?;
    if grad_output.dims() != (kernel.out_channels, out_h, out_w) {
        return Err(TensorError::DimMismatch {
            left: grad_output.dims(),
            right: (kernel.out_channels, out_h, out_w),
        });
    }
    if use_gemm_path(kernel, stride, padding, out_h, out_w) {
        conv2d_backward_gemm(input, kernel, grad_output, stride, padding, out_h, out_w, need_input)
    } else {
        conv2d_backward_direct(input, kernel, grad_output, stride, padding, out_h, out_w, need_input)
    }
}

fn conv2d_backward_direct<T: Elem>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
    grad_output: &Tensor<T>,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
    need_input: bool,
) -> Result<(Option<Tensor<T>>, ConvKernel<T>)> {
    let (_, h, w) = input.dims();
    let (kh, kw) = kernel.kernel_dims();
    let mut grad_input = Tensor::zeros(input.channels(), h, w);
    let mut grads = kernel.zeros_like();
    for o in 0..kernel.out_channels {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let g = grad_output.at(o, oy, ox);
                grads.bias[o] += g;
                for i in 0..kernel.in_channels {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let widx = ((o * kernel.in_channels + i) * kh + ky) * kw + kx;
                            grads.weights[widx] += g * input.at(i, iy as usize, ix as usize);
                            let gidx = (i * h + iy as usize) * w + ix as usize;
                            grad_input.data_mut()[gidx] += g * kernel.weights[widx];
                        }
                    }
                }
            }
        }
    }
    Ok((need_input.then_some(grad_input), grads))
}

/// Scatter-add of `cols` (row-major `K x tile_n`) back into `grad_input`;
/// the adjoint of [`fill_cols`].
fn scatter_cols<T: Elem>(
    grad_input: &mut Tensor<T>,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_w: usize,
    n0: usize,
    tile_n: usize,
    cols: &[T],
) {
    let (_, h, w) = grad_input.dims();
    let plane = h * w;
    for (row_idx, row) in cols.chunks_exact(tile_n).enumerate() {
        let i = row_idx / (kh * kw);
        let ky = (row_idx / kw) % kh;
        let kx = row_idx % kw;
        let base = i * plane;
        let mut n = 0usize;
        while n < tile_n {
            let p = n0 + n;
            let oy = p / out_w;
            let ox0 = p % out_w;
            let run = (out_w - ox0).min(tile_n - n);
            let iy = (oy * stride + ky) as isize - padding as isize;
            if iy >= 0 && iy < h as isize {
                let dst_row = base + iy as usize * w;
                let seg = &row[n..n + run];
                if stride == 1 {
                    // Mirror image of the fill: only the in-image middle
                    // segment lands anywhere.
                    let ix0 = ox0 as isize + kx as isize - padding as isize;
                    let left = (-ix0).clamp(0, run as isize) as usize;
                    let valid_end = (w as isize - ix0).clamp(0, run as isize) as usize;
                    if valid_end > left {
                        let dst0 = dst_row + (ix0 + left as isize) as usize;
                        let dst = &mut grad_input.data_mut()[dst0..dst0 + (valid_end - left)];
                        for (d, &v) in dst.iter_mut().zip(&seg[left..valid_end]) {
                            *d += v;
                        }
                    }
                } else {
                    for (j, &v) in seg.iter().enumerate() {
                        let ix = ((ox0 + j) * stride + kx) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            grad_input.data_mut()[dst_row + ix as usize] += v;
                        }
                    }
                }
            }
            n += run;
        }
    }
}

fn conv2d_backward_gemm<T: Elem>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
    grad_output: &Tensor<T>,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
    need_input: bool,
) -> Result<(Option<Tensor<T>>, ConvKernel<T>)> {
    let m = kernel.out_channels;
    let (kh, kw) = kernel.kernel_dims();
    let k = kernel.in_channels * kh * kw;
    let n = out_h * out_w;

    let mut grad_input =
        need_input.then(|| Tensor::<T>::zeros(input.channels(), input.height(), input.width()));
    let mut grads = kernel.zeros_like();

    for o in 0..m {
        let mut acc = T::zero();
        for &g in &grad_output.data()[o * n..(o + 1) * n] {
            acc += g;
        }
        grads.bias[o] = acc;
    }

    let one_by_one = kh == 1 && kw == 1 && stride == 1 && padding == 0;
    let tile_cap = COL_TILE.min(n);
    let mut cols = if one_by_one {
        Vec::new()
    } else {
        vec![T::zero(); k * tile_cap]
    };
    let mut grad_cols = if need_input {
        vec![T::zero(); k * tile_cap]
    } else {
        Vec::new()
    };

    let mut n0 = 0usize;
    while n0 < n {
        let tile_n = COL_TILE.min(n - n0);
        let (b_ptr, rsb) = if one_by_one {
            (unsafe { input.data().as_ptr().add(n0) }, n as isize)
        } else {
            fill_cols(
                input,
                kh,
                kw,
                stride,
                padding,
                out_w,
                n0,
                tile_n,
                &mut cols[..k * tile_n],
            );
            (cols.as_ptr(), tile_n as isize)
        };
        unsafe {
            // grad_weights[M x K] += grad_out_tile[M x tile] * cols_tile^T
            T::gemm_strided(
                m,
                tile_n,
                k,
                T::one(),
                grad_output.data().as_ptr().add(n0),
                n as isize,
                1,
                b_ptr,
                1,
                rsb,
                T::one(),
                grads.weights.as_mut_ptr(),
                k as isize,
                1,
            );
        }
        if let Some(grad_input) = grad_input.as_mut() {
            unsafe {
                // grad_cols[K x tile] = W^T[K x M] * grad_out_tile[M x tile]
                T::gemm_strided(
                    k,
                    m,
                    tile_n,
                    T::one(),
                    kernel.weights.as_ptr(),
                    1,
                    k as isize,
                    grad_output.data().as_ptr().add(n0),
                    n as isize,
                    1,
                    T::zero(),
                    grad_cols.as_mut_ptr(),
                    tile_n as isize,
                    1,
                );
            }
            if one_by_one {
                // grad_input columns are disjoint per tile; add rows directly.
                for i in 0..k {
                    let dst = &mut grad_input.data_mut()[i * n + n0..i * n + n0 + tile_n];
                    let src = &grad_cols[i * tile_n..i * tile_n + tile_n];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            } else {
                scatter_cols(
                    grad_input,
                    kh,
                    kw,
                    stride,
                    padding,
                    out_w,
                    n0,
                    tile_n,
                    &grad_cols[..k * tile_n],
                );
            }
        }
        n0 += tile_n;
    }

    Ok((grad_input, grads))
}

/// Elementwise `max(0, v)`.
pub fn relu_forward<T: Elem>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes gradient where the forward input was strictly positive; the
/// subgradient at exactly zero is taken as zero.
pub fn relu_backward<T: Elem>(input: &Tensor<T>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    if input.dims() != grad_output.dims() {
        return Err(TensorError::DimMismatch {
            left: input.dims(),
            right: grad_output.dims(),
        });
    }
    let data = input
        .data()
        .iter()
        .zip(grad_output.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.channels(), input.height(), input.width(), data)
}
