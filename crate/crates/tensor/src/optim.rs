use std::collections::HashMap;

use crate::nn::Module;
use crate::{Gradients, Real, Tensor};

/// Adam with bias correction. Moment buffers are keyed by parameter name, so
/// the optimiser survives parameters being replaced after every step.
#[derive(Debug, Clone)]
pub struct Adam<T: Real> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: HashMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: HashMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter of `module` that has a gradient.
    pub fn step<M: Module<T> + ?Sized>(&mut self, module: &mut M, grads: &Gradients<T>) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (lr, eps) = (self.lr, self.eps);
        let moments = &mut self.moments;
        module.visit_params_mut("", &mut |name, p| {
            let Some(g) = grads.get(p) else { return };
            let g = g.data();
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![T::zero(); g.len()], vec![T::zero(); g.len()]));
            let mut data = p.to_vec();
            for i in 0..data.len() {
                let gi = g[i].as_f64();
                let mi = b1 * m[i].as_f64() + (1.0 - b1) * gi;
                let vi = b2 * v[i].as_f64() + (1.0 - b2) * gi * gi;
                m[i] = T::from_f64(mi);
                v[i] = T::from_f64(vi);
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                data[i] = T::from_f64(data[i].as_f64() - update);
            }
            let shape = p.shape().to_vec();
            *p = Tensor::from_vec(data, &shape)
                .expect("parameter shape is unchanged")
                .requires_grad_();
        });
    }
}
