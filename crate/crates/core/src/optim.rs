use serde::{Deserialize, Serialize};

use crate::model::Model;

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &Model, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = model.blocks().iter().map(|(_, b)| vec![0.0; b.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &Model) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let blocks = model.blocks_mut().into_iter().zip(grads.blocks());
        for (((_, params), (_, g)), (m, v)) in blocks.zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..params.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let update = m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * params[i];
                params[i] -= self.lr * update;
            }
        }
    }
}
