//! Adaptive-moment gradient updates for the network parameters.

use crate::net::NetworkParams;
use crate::tensor::Elem;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

/// First/second moment accumulators, shaped exactly like the parameters,
/// plus the step counter used for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState<T = f32> {
    m: NetworkParams<T>,
    v: NetworkParams<T>,
    step: u64,
}

impl<T: Elem> AdamState<T> {
    pub fn new(params: &NetworkParams<T>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One update with bias-corrected moments:
/// `m <- b1*m + (1-b1)*g`, `v <- b2*v + (1-b2)*g^2`,
/// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)`
/// with `b1 = 0.9`, `b2 = 0.999`, `eps = 1e-8`.
pub fn adam_step<T: Elem>(
    params: &mut NetworkParams<T>,
    grads: &NetworkParams<T>,
    state: &mut AdamState<T>,
    learning_rate: f64,
) {
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(BETA1);
    let b2 = T::from_f64(BETA2);
    let one = T::one();
    let eps = T::from_f64(EPSILON);
    let lr = T::from_f64(learning_rate);
    let bc1 = T::from_f64(1.0 - BETA1.powi(t));
    let bc2 = T::from_f64(1.0 - BETA2.powi(t));

    let mut p_bufs = params.buffers_mut();
    let mut m_bufs = state.m.buffers_mut();
    let mut v_bufs = state.v.buffers_mut();
    let g_bufs = grads.buffers();
    for b in 0..6 {
        let p = &mut p_bufs[b];
        let m = &mut m_bufs[b];
        let v = &mut v_bufs[b];
        let g = g_bufs[b];
        for i in 0..g.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = crate::net::init_params::<f64>(1, 2, 5);
        let before = params.clone();
        let grads = params.zeros_like();
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.1);
        assert_eq!(params, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_roughly_lr() {
        // At t=1 the bias-corrected update is lr * g / (|g| + eps'), i.e.
        // close to a signed step of magnitude lr.
        let mut params = NetworkParams::<f64>::zeros(1, 1);
        let mut grads = params.zeros_like();
        grads.conv3.weights_mut()[0] = 0.37;
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.01);
        let w = params.conv3.weights()[0];
        assert!((w + 0.01).abs() < 1e-6, "got {w}");
    }

    #[test]
    fn quadratic_converges_like_scalar_recurrence() {
        // Independent scalar recurrence for minimizing w^2 from w=1 with
        // lr=0.1, written with plain f64 arithmetic.
        let (b1, b2, eps, lr) = (0.9f64, 0.999, 1e-8, 0.1);
        let mut w_ref = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * w_ref;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            w_ref -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        assert!(w_ref.abs() < 0.1, "reference recurrence ended at {w_ref}");

        // The implementation, driven through a single parameter entry.
        let mut params = NetworkParams::<f64>::zeros(1, 1);
        params.conv3.weights_mut()[0] = 1.0;
        let mut state = AdamState::new(&params);
        for _ in 0..100 {
            let mut grads = params.zeros_like();
            grads.conv3.weights_mut()[0] = 2.0 * params.conv3.weights()[0];
            adam_step(&mut params, &grads, &mut state, lr);
        }
        let w = params.conv3.weights()[0];
        assert!((w - w_ref).abs() < 1e-12, "impl {w} vs reference {w_ref}");
        assert!(w.abs() < 0.1);
        // Entries with zero gradient never moved.
        assert!(params.conv1.weights().iter().all(|&x| x == 0.0));
        assert_eq!(state.step_count(), 100);
    }
}
