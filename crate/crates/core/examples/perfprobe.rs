use std::time::Instant;
use noisepair::*;
use noisepair::net::{init_params, forward_trace, backward_trace};
use noisepair::loss::{loss_and_grad, LossVariant};

fn timeit<R>(label: &str, reps: usize, mut f: impl FnMut() -> R) -> f64 {
    let _ = f();
    let t0 = Instant::now();
    for _ in 0..reps { let _ = f(); }
    let per = t0.elapsed().as_secs_f64() / reps as f64;
    println!("{label}: {:.1} ms", per * 1e3);
    per
}

fn main() {
    let mut rng = RngStream::new(1, 0);
    let data: Vec<f32> = (0..3*256*256).map(|_| rng.next_f64() as f32).collect();
    let y = Tensor::<f32>::from_vec(3, 256, 256, data).unwrap();
    let params = init_params::<f32>(3, 48, 1);

    timeit("downsample_pair 256", 20, || downsample_pair(&y).unwrap());
    let trace = forward_trace(&params, &y).unwrap();
    timeit("forward_trace 256", 10, || forward_trace(&params, &y).unwrap());
    let gout = trace.output.clone();
    timeit("backward_trace 256", 10, || {
        let mut grads = params.zeros_like();
        backward_trace(&params, &y, &trace, &gout, &mut grads).unwrap();
    });
    let pair = downsample_pair(&y).unwrap();
    let t128 = forward_trace(&params, &pair.first).unwrap();
    timeit("forward_trace 128", 10, || forward_trace(&params, &pair.first).unwrap());
    let g128 = t128.output.clone();
    timeit("backward_trace 128", 10, || {
        let mut grads = params.zeros_like();
        backward_trace(&params, &pair.first, &t128, &g128, &mut grads).unwrap();
    });
    timeit("full loss_and_grad", 5, || loss_and_grad(&params, &y, LossVariant::Full).unwrap());

    // individual convs at 256
    let k1 = &params.conv1; let k2 = &params.conv2; let k3 = &params.conv3;
    let a1 = conv2d_forward(&y, k1, 1, 1).unwrap();
    timeit("conv1 fwd 256", 10, || conv2d_forward(&y, k1, 1, 1).unwrap());
    let a1r = relu_forward(&a1);
    timeit("conv2 fwd 256", 10, || conv2d_forward(&a1r, k2, 1, 1).unwrap());
    let a2 = conv2d_forward(&a1r, k2, 1, 1).unwrap();
    let a2r = relu_forward(&a2);
    timeit("conv3 fwd 256", 10, || conv2d_forward(&a2r, k3, 1, 0).unwrap());
    timeit("conv2 bwd 256", 10, || conv2d_backward(&a1r, k2, &a2, 1, 1).unwrap());
    timeit("relu fwd 256x48", 20, || relu_forward(&a1));
}
