use crate::Tensor;

/// Adam with bias correction, updating parameters in place.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    state: AdamState,
}

/// First/second moment estimates and the update counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl Adam {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon: 1e-8,
            state: AdamState::default(),
        }
    }

    pub fn with_state(mut self, state: AdamState) -> Self {
        self.state = state;
        self
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.state.first_moment.is_empty() {
            self.state.first_moment = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.state.second_moment = self.state.first_moment.clone();
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(
            self.state
                .first_moment
                .iter_mut()
                .zip(self.state.second_moment.iter_mut()),
        ) {
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first update is lr * sign(g).
        let mut p = vec![Tensor::new([2], vec![1.0, -1.0])];
        let g = vec![Tensor::new([2], vec![0.3, -5.0])];
        let mut adam = Adam::new(0.1, 0.9, 0.999);
        adam.step(&mut p, &g);
        assert!((p[0].data()[0] - 0.9).abs() < 1e-6);
        assert!((p[0].data()[1] + 0.9).abs() < 1e-6);
        assert_eq!(adam.state().step, 1);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = vec![Tensor::new([1], vec![3.0])];
        let mut adam = Adam::new(0.05, 0.9, 0.999);
        for _ in 0..2000 {
            let g = vec![p[0].map(|x| 2.0 * (x - 1.0))];
            adam.step(&mut p, &g);
        }
        assert!((p[0].data()[0] - 1.0).abs() < 1e-3);
    }
}
