use crate::autodiff::{Gradients, Var};
use crate::params::ParamSet;

/// Adam with bias correction; first and second moments per parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update from the gradients of the leaves `vars` (aligned with `params`).
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients, vars: &[Var]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, var) in vars.iter().enumerate() {
            let Some(g) = grads.get(*var) else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params.get_mut(i).data_mut();
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
