use serde::{Deserialize, Serialize};

use super::mlp::{Gradient, Mlp};

/// Adam with bias-corrected moments. Steps whose gradient contains a
/// non-finite entry are skipped and counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    pub skipped: u64,
    /// First and second moments, flattened in parameter order.
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            skipped: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn for_net(mlp: &Mlp) -> Self {
        Self::new(mlp.num_params())
    }

    /// Applies one update in place. Returns `false` when the step was skipped.
    pub fn step(&mut self, mlp: &mut Mlp, grad: &Gradient, lr: f64) -> bool {
        if !grad.is_finite() {
            self.skipped += 1;
            return false;
        }
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let mut idx = 0;
        for (layer, g) in mlp.layers.iter_mut().zip(&grad.layers) {
            let params = layer.weight.iter_mut().chain(layer.bias.iter_mut());
            let grads = g.weight.iter().chain(g.bias.iter());
            for (p, &gi) in params.zip(grads) {
                let m = &mut self.m[idx];
                let v = &mut self.v[idx];
                *m = b1 * *m + (1.0 - b1) * gi;
                *v = b2 * *v + (1.0 - b2) * gi * gi;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
                idx += 1;
            }
        }
        true
    }
}
