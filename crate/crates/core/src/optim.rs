//! Adam with bias correction.

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One descent step: `params -= lr · m̂ / (√v̂ + eps)`. Callers maximizing an
/// objective pass the negated gradient.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grad.len(), "parameter/gradient length mismatch");
    assert_eq!(params.len(), state.m.len(), "optimizer state length mismatch");
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1);
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_by_hand() {
        let g = [0.5, -3.0, 1e-3];
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(3);
        let lr = 0.01;
        adam_step(&mut p, &g, &mut s, lr);
        for i in 0..3 {
            // m̂ = g, v̂ = g² after bias correction
            let expect = -lr * g[i] / (g[i].abs() + 1e-8);
            assert!((p[i] - expect).abs() < 1e-15, "{} vs {}", p[i], expect);
        }
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        let lr = 1e-3;
        let mut last = 0.0;
        for _ in 0..1000 {
            let before = p[0];
            adam_step(&mut p, &[2.5], &mut s, lr);
            last = before - p[0];
        }
        assert!((last - lr).abs() < 1e-3 * lr);
    }
}
