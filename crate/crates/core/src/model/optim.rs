//! Adaptive gradient optimizer with decoupled weight decay.

use crate::diff::Tensor;

pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over the full parameter list. Decay applies to matrices
    /// only (vectors hold biases and layer-norm affine terms).
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f64>]) {
        assert_eq!(params.len(), grads.len(), "param/grad count mismatch");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        self.t += 1;
        let b1c = 1.0 - self.beta1.powi(self.t as i32);
        let b2c = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let decay = if p.shape().len() == 2 {
                self.weight_decay
            } else {
                0.0
            };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let data = p.data_mut();
            for j in 0..data.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / b1c;
                let vhat = v[j] / b2c;
                data[j] -= self.lr * (mhat / (vhat.sqrt() + self.eps) + decay * data[j]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descends_a_quadratic() {
        // minimize 0.5*(x - 3)^2 elementwise
        let mut x = Tensor::full(vec![4], 10.0);
        let mut opt = AdamW::new(0.1, 0.0);
        for _ in 0..500 {
            let g: Vec<f64> = x.data().iter().map(|v| v - 3.0).collect();
            opt.step(&mut [&mut x], &[g]);
        }
        for &v in x.data() {
            assert!((v - 3.0).abs() < 1e-2, "converged to {v}");
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let mut x = Tensor::full(vec![3], 1.0);
            let mut opt = AdamW::new(0.05, 0.01);
            for k in 0..50 {
                let g: Vec<f64> = x.data().iter().map(|v| v * 0.5 + k as f64 * 0.01).collect();
                opt.step(&mut [&mut x], &[g]);
            }
            x.data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
