//! Adam with global gradient-norm clipping, and learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::model::{ModelGrads, RetrieverModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 norm above which gradients are rescaled; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    pub step: u64,
    #[serde(skip)]
    pub m: Vec<Vec<f64>>,
    #[serde(skip)]
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &RetrieverModel, lr: f64, max_grad_norm: Option<f64>) -> Self {
        let shapes: Vec<usize> = model.to_named().iter().map(|(_, _, v)| v.len()).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Applies one update; returns the gradient norm before clipping.
    pub fn update(&mut self, model: &mut RetrieverModel, grads: &ModelGrads) -> f64 {
        let norm = grads.l2_norm();
        let scale = match self.max_grad_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((param, grad), m), v) in model
            .params_mut()
            .into_iter()
            .zip(grads.slices())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..param.len() {
                let g = grad[i] * scale;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        norm
    }

    /// Rounds the moment estimates to `f32`, the precision checkpoints store.
    pub fn round_to_f32(&mut self) {
        for buf in self.m.iter_mut().chain(self.v.iter_mut()) {
            buf.iter_mut().for_each(|x| *x = f64::from(*x as f32));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerKind {
    #[default]
    ReduceOnPlateau,
    CosineAnnealing,
    Constant,
}

/// Learning-rate schedule driven once per training iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scheduler {
    pub kind: SchedulerKind,
    pub base_lr: f64,
    pub factor: f64,
    pub patience: u32,
    pub min_lr: f64,
    pub total_iterations: u64,
    best: Option<f64>,
    bad_iterations: u32,
}

impl Scheduler {
    pub fn new(kind: SchedulerKind, base_lr: f64, total_iterations: u64) -> Self {
        Self {
            kind,
            base_lr,
            factor: 0.5,
            patience: 3,
            min_lr: base_lr * 1e-3,
            total_iterations: total_iterations.max(1),
            best: None,
            bad_iterations: 0,
        }
    }

    /// Learning rate for the next iteration, given the current one, the
    /// iteration just finished (1-based), and the validation reward.
    pub fn step(&mut self, lr: f64, iteration: u64, validation: f64) -> f64 {
        match self.kind {
            SchedulerKind::Constant => lr,
            SchedulerKind::CosineAnnealing => {
                let progress = (iteration as f64 / self.total_iterations as f64).min(1.0);
                self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
            }
            SchedulerKind::ReduceOnPlateau => {
                let improved = match self.best {
                    None => true,
                    Some(best) => validation > best + 1e-4 * best.abs().max(1e-8),
                };
                if improved {
                    self.best = Some(validation);
                    self.bad_iterations = 0;
                    lr
                } else {
                    self.bad_iterations += 1;
                    if self.bad_iterations > self.patience {
                        self.bad_iterations = 0;
                        (lr * self.factor).max(self.min_lr)
                    } else {
                        lr
                    }
                }
            }
        }
    }
}
