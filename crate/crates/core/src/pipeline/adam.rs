//! Adam optimizer over a parameter set. beta = (0.9, 0.999), eps = 1e-8,
//! no weight decay, no schedule.

use crate::params::{GradSet, ParamSet};
use crate::scalar::Scalar;

pub struct Adam<S> {
    lr: S,
    beta1: S,
    beta2: S,
    eps: S,
    step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(params: &ParamSet<S>, learning_rate: f64) -> Self {
        Adam {
            lr: S::of(learning_rate),
            beta1: S::of(0.9),
            beta2: S::of(0.999),
            eps: S::of(1e-8),
            step: 0,
            m: params.tensors().iter().map(|t| vec![S::zero(); t.len()]).collect(),
            v: params.tensors().iter().map(|t| vec![S::zero(); t.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet<S>, grads: &GradSet<S>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = S::one() - self.beta1.powi(t);
        let bc2 = S::one() - self.beta2.powi(t);
        for (i, tensor) in params.tensors_mut().iter_mut().enumerate() {
            let g = &grads.grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for (j, w) in tensor.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (S::one() - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (S::one() - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w = *w - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn descends_a_quadratic() {
        // Minimize (w - 3)^2 with gradient 2(w - 3).
        let mut params: ParamSet<f64> = ParamSet::new();
        params.add("w", Tensor::scalar(0.0));
        let mut adam = Adam::new(&params, 0.1);
        for _ in 0..500 {
            let w = params.get(crate::params::ParamId(0)).first();
            let grads = GradSet {
                grads: vec![vec![2.0 * (w - 3.0)]],
            };
            adam.step(&mut params, &grads);
        }
        let w = params.get(crate::params::ParamId(0)).first();
        assert!((w - 3.0).abs() < 1e-2, "converged to {w}");
    }
}
