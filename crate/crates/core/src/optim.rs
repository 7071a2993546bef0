use alloc::vec::Vec;
use num_traits::Float;

use crate::model::Param;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(learning_rate: f64, params: &[Param]) -> Self {
        Self {
            learning_rate: learning_rate as f32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| alloc::vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| alloc::vec![0.0; p.len()]).collect(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Param], grads: &[Vec<f32>]) {
        self.step += 1;
        let bc1 = 1.0 - Float::powf(self.beta1, self.step as f32);
        let bc2 = 1.0 - Float::powf(self.beta2, self.step as f32);
        let lr = self.learning_rate;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((w, &g), m), v) in p
                .value
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *w -= lr * mh / (Float::sqrt(vh) + self.eps);
            }
        }
    }
}
