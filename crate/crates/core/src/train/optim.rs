use crate::tensor::{ParamId, ParamStore, Tensor};

/// Linear warmup to `peak` over `warmup` steps, then decay with `1/sqrt(step)`.
/// Steps are 1-based.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InverseSqrt {
    pub peak: f64,
    pub warmup: usize,
}

impl InverseSqrt {
    pub fn lr(&self, step: usize) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup.max(1) as f64;
        self.peak * (s / w).min((w / s).sqrt())
    }
}

/// Adam with bias correction. Moments exist only for parameters that have
/// received a gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Option<Tensor>>,
    pub v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(num_params: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            t: 0,
            m: vec![None; num_params],
            v: vec![None; num_params],
        }
    }

    /// One update with gradients indexed by parameter id. Frozen parameters
    /// and parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let id = ParamId(i);
            let Some(g) = g else { continue };
            if !store.is_trainable(id) {
                continue;
            }
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let w = store.get_mut(id).value.data_mut();
            for (((w, &g), m), v) in w.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}
