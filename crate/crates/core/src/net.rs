//! The denoising network: two 3x3 convolutions with ReLU between, capped by
//! a 1x1 convolution. No normalization, no pooling. With 3 input channels
//! and 48 hidden channels this is 22,275 parameters, small enough to fit to
//! a single image on a CPU.
//!
//! The network is trained to predict the *noise*; callers subtract its
//! output from the input to obtain the clean estimate.

use crate::rng::RngStream;
use crate::tensor::{
    conv2d_backward, conv2d_forward, relu_backward, relu_forward, ConvKernel, Elem, Result, Tensor,
    TensorError,
};

/// Default hidden width; see [`NetworkParams::param_count`].
pub const DEFAULT_HIDDEN: usize = 48;

/// Trainable parameters of the three-convolution network. Also used as the
/// container for gradients, which share the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T = f32> {
    pub conv1: ConvKernel<T>,
    pub conv2: ConvKernel<T>,
    pub conv3: ConvKernel<T>,
}

impl<T: Elem> NetworkParams<T> {
    /// All-zero parameters for a `channels -> hidden -> hidden -> channels`
    /// network.
    pub fn zeros(channels: usize, hidden: usize) -> Self {
        Self {
            conv1: ConvKernel::zeros(hidden, channels, 3, 3),
            conv2: ConvKernel::zeros(hidden, hidden, 3, 3),
            conv3: ConvKernel::zeros(channels, hidden, 1, 1),
        }
    }

    pub fn channels(&self) -> usize {
        self.conv1.in_channels()
    }

    pub fn hidden_channels(&self) -> usize {
        self.conv1.out_channels()
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count() + self.conv3.param_count()
    }

    /// Zero gradients (or moments) shaped like these parameters.
    pub fn zeros_like(&self) -> Self {
        Self {
            conv1: self.conv1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            conv3: self.conv3.zeros_like(),
        }
    }

    /// The six underlying buffers in a fixed order: w1, b1, w2, b2, w3, b3.
    pub fn buffers(&self) -> [&[T]; 6] {
        [
            self.conv1.weights(),
            self.conv1.bias(),
            self.conv2.weights(),
            self.conv2.bias(),
            self.conv3.weights(),
            self.conv3.bias(),
        ]
    }

    pub fn buffers_mut(&mut self) -> [&mut [T]; 6] {
        let (w1, b1) = self.conv1.weights_bias_mut();
        let (w2, b2) = self.conv2.weights_bias_mut();
        let (w3, b3) = self.conv3.weights_bias_mut();
        [w1, b1, w2, b2, w3, b3]
    }

    /// In-place `self += other`, used to accumulate gradients from several
    /// backward passes.
    pub fn add_assign(&mut self, other: &Self) {
        for (dst, src) in self.buffers_mut().into_iter().zip(other.buffers()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn cast<U: Elem>(&self) -> NetworkParams<U> {
        NetworkParams {
            conv1: self.conv1.cast(),
            conv2: self.conv2.cast(),
            conv3: self.conv3.cast(),
        }
    }
}

/// Stream id used for parameter initialization draws.
pub const INIT_STREAM: u64 = 0;

/// Random initial parameters: weights uniform in `[-sqrt(1/fan_in),
/// sqrt(1/fan_in))` drawn layer by layer in buffer order, biases zero.
/// Bitwise deterministic for a given seed.
pub fn init_params<T: Elem>(channels: usize, hidden: usize, seed: u64) -> NetworkParams<T> {
    assert!(hidden >= 1, "hidden width must be at least 1");
    assert!(channels >= 1, "channel count must be at least 1");
    let mut rng = RngStream::new(seed, INIT_STREAM);
    let mut params = NetworkParams::zeros(channels, hidden);
    for kernel in [&mut params.conv1, &mut params.conv2, &mut params.conv3] {
        let (kh, kw) = kernel.kernel_dims();
        let fan_in = kernel.in_channels() * kh * kw;
        let bound = (1.0 / fan_in as f64).sqrt();
        for w in kernel.weights_mut() {
            *w = T::from_f64(rng.uniform(-bound, bound));
        }
    }
    params
}

/// Activations retained by [`forward_trace`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T = f32> {
    pub pre1: Tensor<T>,
    pub act1: Tensor<T>,
    pub pre2: Tensor<T>,
    pub act2: Tensor<T>,
    pub output: Tensor<T>,
}

/// Runs the network and keeps intermediate activations.
pub fn forward_trace<T: Elem>(params: &NetworkParams<T>, input: &Tensor<T>) -> Result<ForwardTrace<T>> {
    if input.channels() != params.channels() {
        return Err(TensorError::ChannelMismatch {
            input: input.channels(),
            kernel: params.channels(),
        });
    }
    let pre1 = conv2d_forward(input, &params.conv1, 1, 1)?;
    let act1 = relu_forward(&pre1);
    let pre2 = conv2d_forward(&act1, &params.conv2, 1, 1)?;
    let act2 = relu_forward(&pre2);
    let output = conv2d_forward(&act2, &params.conv3, 1, 0)?;
    Ok(ForwardTrace {
        pre1,
        act1,
        pre2,
        act2,
        output,
    })
}

/// The network's output for `input`; spatial dims are preserved.
pub fn network_forward<T: Elem>(params: &NetworkParams<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(forward_trace(params, input)?.output)
}

/// Backpropagates `grad_output` through a traced forward pass, accumulating
/// parameter gradients into `grads`. Returns nothing else; the gradient with
/// respect to the input is not needed by any caller.
pub fn backward_trace<T: Elem>(
    params: &NetworkParams<T>,
    input: &Tensor<T>,
    trace: &ForwardTrace<T>,
    grad_output: &Tensor<T>,
    grads: &mut NetworkParams<T>,
) -> Result<()> {
    let g3 = conv2d_backward(&trace.act2, &params.conv3, grad_output, 1, 0)?;
    grads.conv3.accumulate(&g3.kernel);
    let g_pre2 = relu_backward(&trace.pre2, &g3.input)?;
    let g2 = conv2d_backward(&trace.act1, &params.conv2, &g_pre2, 1, 1)?;
    grads.conv2.accumulate(&g2.kernel);
    let g_pre1 = relu_backward(&trace.pre1, &g2.input)?;
    // First layer: nothing consumes the image gradient.
    let g1 = crate::tensor::conv2d_backward_params_only(input, &params.conv1, &g_pre1, 1, 1)?;
    grads.conv1.accumulate(&g1);
    Ok(())
}

impl<T: Elem> ConvKernel<T> {
    /// In-place elementwise add of another kernel's values (gradient
    /// accumulation).
    pub fn accumulate(&mut self, other: &ConvKernel<T>) {
        for (d, &s) in self.weights_mut().iter_mut().zip(other.weights()) {
            *d += s;
        }
        for (d, &s) in self.bias_mut().iter_mut().zip(other.bias()) {
            *d += s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_give_zero_output() {
        let params = NetworkParams::<f32>::zeros(3, 8);
        let input = Tensor::full(3, 6, 6, 0.7);
        let out = network_forward(&params, &input).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_dims_match_input_dims() {
        let params = init_params::<f32>(1, 4, 3);
        for (h, w) in [(1, 1), (2, 5), (9, 3), (16, 16)] {
            let input = Tensor::full(1, h, w, 0.2);
            let out = network_forward(&params, &input).unwrap();
            assert_eq!(out.dims(), (1, h, w));
        }
    }

    #[test]
    fn default_width_has_22275_params() {
        let params = NetworkParams::<f32>::zeros(3, DEFAULT_HIDDEN);
        assert_eq!(params.conv1.param_count(), 1344);
        assert_eq!(params.conv2.param_count(), 20784);
        assert_eq!(params.conv3.param_count(), 147);
        assert_eq!(params.param_count(), 22_275);
        assert_eq!(init_params::<f32>(3, 48, 1).param_count(), 22_275);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_params::<f32>(3, 48, 42);
        let b = init_params::<f32>(3, 48, 42);
        assert_eq!(a, b);
        let c = init_params::<f32>(3, 48, 43);
        assert_ne!(a, c);

        for kernel in [&a.conv1, &a.conv2, &a.conv3] {
            let (kh, kw) = kernel.kernel_dims();
            let bound = (1.0 / (kernel.in_channels() * kh * kw) as f64).sqrt() as f32;
            assert!(kernel.weights().iter().all(|w| w.abs() <= bound));
            assert!(kernel.bias().iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let params = NetworkParams::<f32>::zeros(3, 8);
        let input = Tensor::full(2, 4, 4, 0.1);
        assert!(matches!(
            network_forward(&params, &input),
            Err(TensorError::ChannelMismatch { .. })
        ));
    }
}
