//! Double-Q learner: Huber loss on n-step targets, Adam, periodic target sync.

use std::sync::Arc;

use super::nstep::{target_value, ReplayEntry};
use super::replay::SampledBatch;
use super::TrainError;
use crate::agents::{Params, QNetwork, QValues};
use crate::par::{self, Exec};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

pub fn huber(x: f64) -> f64 {
    if x.abs() <= 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn huber_grad(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// `R + gamma^m * Q_target(s', argmax_a Q_online(s', a))`, or `R` when
/// terminated.
pub fn double_q_target(entry: &ReplayEntry, online_next: &QValues, target_next: &QValues) -> f64 {
    if entry.terminated {
        return entry.reward;
    }
    target_value(entry, target_next.q[online_next.argmax()])
}

#[derive(Debug, Clone)]
pub struct StepStats {
    pub loss: f64,
    /// `|Q(s, a) - y|` per batch entry, the new priorities.
    pub td_errors: Vec<f64>,
    pub targets: Vec<f64>,
}

/// Online and target parameters plus optimizer state.
pub struct Learner {
    net: Arc<QNetwork>,
    pub online: Params,
    pub target: Params,
    adam: Adam,
    pub grad_clip: f64,
    pub target_sync: u64,
    pub exec: Exec,
    steps: u64,
}

impl Learner {
    pub fn new(net: Arc<QNetwork>, params: Params, lr: f64, target_sync: u64, exec: Exec) -> Learner {
        let adam = Adam::new(params.data.len(), lr);
        Learner {
            net,
            target: params.clone(),
            online: params,
            adam,
            grad_clip: 10.0,
            target_sync: target_sync.max(1),
            exec,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Loss and gradient of a batch without touching parameters.
    pub fn loss_and_grad(&self, entries: &[&ReplayEntry], weights: &[f64]) -> Result<(StepStats, Vec<f64>), TrainError> {
        let b = entries.len();
        let n = self.online.data.len();
        // Fixed chunking keeps the summation order independent of threads.
        let chunk = b.div_ceil(8).max(1);
        let starts: Vec<usize> = (0..b).step_by(chunk).collect();
        let parts = par::map(self.exec, &starts, |&start| {
            let mut grad = vec![0.0; n];
            let mut rows = Vec::new();
            for i in start..(start + chunk).min(b) {
                let e = entries[i];
                let (q, cache) = self.net.forward_cached(&self.online, &e.obs)?;
                let y = if e.terminated {
                    e.reward
                } else {
                    let on = self.net.forward(&self.online, &e.next_obs)?;
                    let tg = self.net.forward(&self.target, &e.next_obs)?;
                    double_q_target(e, &on, &tg)
                };
                let delta = q.q[e.action] - y;
                let mut dq = vec![0.0; q.q.len()];
                dq[e.action] = weights[i] * huber_grad(delta) / b as f64;
                self.net.backward(&self.online, &cache, &dq, &mut grad);
                rows.push((weights[i] * huber(delta), delta.abs(), y));
            }
            Ok::<_, TrainError>((grad, rows))
        });
        let mut grad = vec![0.0; n];
        let mut stats = StepStats {
            loss: 0.0,
            td_errors: Vec::with_capacity(b),
            targets: Vec::with_capacity(b),
        };
        for part in parts {
            let (g, rows) = part?;
            for (acc, x) in grad.iter_mut().zip(&g) {
                *acc += x;
            }
            for (l, td, y) in rows {
                stats.loss += l;
                stats.td_errors.push(td);
                stats.targets.push(y);
            }
        }
        stats.loss /= b as f64;
        Ok((stats, grad))
    }

    /// One optimizer step on a sampled batch.
    pub fn train_step(&mut self, batch: &SampledBatch<'_>) -> Result<StepStats, TrainError> {
        let (stats, mut grad) = self.loss_and_grad(&batch.entries, &batch.weights)?;
        if !stats.loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFinite {
                step: self.steps,
                loss: stats.loss,
            });
        }
        if self.grad_clip > 0.0 {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > self.grad_clip {
                let s = self.grad_clip / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        self.adam.step(&mut self.online.data, &grad);
        self.steps += 1;
        if self.steps.is_multiple_of(self.target_sync) {
            self.target = self.online.clone();
        }
        Ok(stats)
    }
}
