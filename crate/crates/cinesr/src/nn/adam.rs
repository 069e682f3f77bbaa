//! Adaptive-moment optimizer with bias correction.

use super::ParamStore;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, store: &ParamStore) -> Self {
        let m = (0..store.len()).map(|i| vec![0.0; store.array(i).len()]).collect();
        let v = (0..store.len()).map(|i| vec![0.0; store.array(i).len()]).collect();
        Adam { lr, beta1, beta2, eps, step: 0, m, v }
    }

    /// One update. `grads` must align with the store's registration order.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) {
        assert_eq!(grads.len(), store.len(), "gradient count mismatch");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (idx, grad) in grads.iter().enumerate() {
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let w = &mut store.array_mut(idx).data;
            assert_eq!(grad.len(), w.len(), "gradient length mismatch at {idx}");
            for i in 0..w.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Array;

    /// First step moves every weight by exactly lr (up to eps), since
    /// m_hat/sqrt(v_hat) == sign(g) after bias correction.
    #[test]
    fn first_step_magnitude() {
        let mut store = ParamStore::new();
        store.add("w", Array::new(vec![3], vec![1.0, -2.0, 0.5]));
        let mut opt = Adam::new(0.1, 0.9, 0.999, 1e-8, &store);
        opt.step(&mut store, &[vec![0.3, -0.7, 2.0]]);
        let w = &store.array(0).data;
        assert!((w[0] - (1.0 - 0.1)).abs() < 1e-6);
        assert!((w[1] - (-2.0 + 0.1)).abs() < 1e-6);
        assert!((w[2] - (0.5 - 0.1)).abs() < 1e-6);
    }

    /// Converges on a separable quadratic.
    #[test]
    fn minimizes_quadratic() {
        let mut store = ParamStore::new();
        store.add("w", Array::new(vec![2], vec![5.0, -3.0]));
        let mut opt = Adam::new(0.05, 0.9, 0.999, 1e-8, &store);
        for _ in 0..2000 {
            let g: Vec<f64> = store.array(0).data.iter().map(|w| 2.0 * w).collect();
            opt.step(&mut store, &[g]);
        }
        assert!(store.array(0).data.iter().all(|w| w.abs() < 1e-3));
    }
}
