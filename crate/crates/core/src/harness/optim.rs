use std::collections::BTreeMap;

use crate::numeric::{ParamStore, Tensor};

/// Adam with bias correction. Moment buffers are created lazily per
/// parameter and are not persisted in checkpoints.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters absent from `grads` are left alone
    /// but still see the step counter advance.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, value) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for (((w, &gi), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::vector(vec![1.0, -2.0, 0.5]));
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), Tensor::vector(vec![3.0, -0.1, 0.0]));
        let mut opt = Adam::new(0.01);
        opt.step(&mut p, &g);
        let w = p.get("w").unwrap().data();
        // Bias-corrected first step is lr * sign(g) up to eps.
        assert!((w[0] - 0.99).abs() < 1e-8);
        assert!((w[1] + 1.99).abs() < 1e-6);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::vector(vec![5.0]));
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let w = p.get("w").unwrap().data()[0];
            let mut g = BTreeMap::new();
            g.insert("w".to_string(), Tensor::vector(vec![2.0 * (w - 1.0)]));
            opt.step(&mut p, &g);
        }
        assert!((p.get("w").unwrap().data()[0] - 1.0).abs() < 1e-2);
    }
}
