use crate::autodiff::Tensor;

/// First and second moment estimates for a list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor::zeros(p.rows(), p.cols()))
                .collect()
        };
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Parameters whose gradient is `None`
/// are left alone, moments included; the step count always advances.
pub fn adam_step(params: &mut [Tensor], grads: &[Option<&Tensor>], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len(), "one gradient slot per parameter");
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        assert_eq!(p.shape(), g.shape(), "gradient shape for parameter {k}");
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::filled(1, 2, 3.0)];
        let mut s = AdamState::new(&p);
        let g = Tensor::zeros(1, 2);
        adam_step(&mut p, &[Some(&g)], &mut s, 0.1);
        assert_eq!(p[0], Tensor::filled(1, 2, 3.0));
        assert_eq!(s.t, 1);
        adam_step(&mut p, &[None], &mut s, 0.1);
        assert_eq!(s.t, 2);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // t = 1: m_hat = g, v_hat = g^2, step = lr * g / (|g| + eps)
        let mut p = vec![Tensor::from_rows(&[vec![1.0, 1.0, 1.0]]).unwrap()];
        let g = Tensor::from_rows(&[vec![0.5, -2.0, 1e-3]]).unwrap();
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[Some(&g)], &mut s, 0.01);
        for (w, gi) in p[0].data().iter().zip(g.data()) {
            let expected = 1.0 - 0.01 * gi / (gi.abs() + 1e-8);
            assert!((w - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let mut p = vec![Tensor::scalar(0.0)];
        let g = Tensor::scalar(2.0);
        let mut s = AdamState::new(&p);
        let mut last = 0.0;
        for _ in 0..50 {
            adam_step(&mut p, &[Some(&g)], &mut s, 0.05);
            assert!(p[0].item() < last);
            last = p[0].item();
        }
        assert!((last + 50.0 * 0.05).abs() < 1e-6);
    }
}
