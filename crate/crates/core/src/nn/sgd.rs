use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Real;

/// Stochastic gradient descent with heavy-ball momentum and L2 weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for Sgd {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

impl Sgd {
    /// `g = grad + wd*w; buf = m*buf + g; w -= lr*buf` for every parameter.
    pub fn step<T: Real>(&self, params: &mut ParamStore<T>) {
        let lr = T::from_f64(self.lr);
        let m = T::from_f64(self.momentum);
        let wd = T::from_f64(self.weight_decay);
        for p in params.iter_mut() {
            let w = p.value.data_mut();
            let buf = p.momentum.data_mut();
            for ((w, b), &g) in w.iter_mut().zip(buf.iter_mut()).zip(p.grad.data()) {
                let g = g + wd * *w;
                *b = m * *b + g;
                *w -= lr * *b;
            }
        }
    }
}
