//! First-order optimizers with per-parameter learning rates.

use serde::{Deserialize, Serialize};

use super::param::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

pub trait Optimizer {
    /// Applies one update using the current parameter grads. `lrs` holds one
    /// learning rate per parameter, in set order.
    fn step(&mut self, params: &mut ParamSet, lrs: &[f64]);
}

/// Stochastic gradient descent with heavy-ball momentum.
#[derive(Clone, Debug)]
pub struct Sgd {
    momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Self {
        Sgd {
            momentum,
            velocity: Vec::new(),
        }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut ParamSet, lrs: &[f64]) {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.value().numel()]).collect();
        }
        for (i, vel) in self.velocity.iter_mut().enumerate() {
            let lr = lrs[i];
            let (value, grad) = params.get_mut(i).parts_mut();
            for ((w, g), v) in value.iter_mut().zip(grad).zip(vel.iter_mut()) {
                *v = self.momentum * *v + g;
                *w -= lr * *v;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(0.9, 0.999, 1e-8)
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut ParamSet, lrs: &[f64]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value().numel()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, &lr) in lrs.iter().enumerate().take(self.m.len()) {
            let (value, grad) = params.get_mut(i).parts_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..value.len() {
                let g = grad[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                value[k] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

pub fn make_optimizer(kind: OptimizerKind) -> Box<dyn Optimizer + Send> {
    match kind {
        OptimizerKind::Sgd => Box::new(Sgd::new(0.9)),
        OptimizerKind::Adam => Box::new(Adam::default()),
    }
}
