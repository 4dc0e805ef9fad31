use serde::{Deserialize, Serialize};

use super::params::{ParameterStore, SlotKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

impl Adam {
    /// One bias-corrected Adam update of every trainable slot.
    pub fn step(&self, store: &mut ParameterStore, lr: f64) {
        store.step += 1;
        let t = store.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for s in store.slots_mut() {
            if s.kind != SlotKind::Trainable {
                continue;
            }
            let n = s.value.len();
            for i in 0..n {
                let mut g = s.grad.data()[i];
                if self.weight_decay != 0.0 {
                    g += self.weight_decay * s.value.data()[i];
                }
                let m = self.beta1 * s.adam_m.data()[i] + (1.0 - self.beta1) * g;
                let v = self.beta2 * s.adam_v.data()[i] + (1.0 - self.beta2) * g * g;
                s.adam_m.data_mut()[i] = m;
                s.adam_v.data_mut()[i] = v;
                let denom = v.sqrt() / bc2.sqrt() + self.eps;
                s.value.data_mut()[i] -= lr / bc1 * m / denom;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerEvent {
    Keep,
    Reduced,
    Stop,
}

/// Multiplies the learning rate by `factor` once the monitored value has
/// failed to beat its best for more than `patience` checks; signals a stop
/// once the rate drops below `min_lr`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    pub best: Option<f64>,
    pub num_bad: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64) -> Self {
        Self { lr, factor, patience, min_lr, best: None, num_bad: 0 }
    }

    pub fn step(&mut self, metric: f64) -> SchedulerEvent {
        match self.best {
            Some(b) if metric <= b => self.num_bad += 1,
            _ => {
                self.best = Some(metric);
                self.num_bad = 0;
            }
        }
        if self.num_bad > self.patience {
            self.lr *= self.factor;
            self.num_bad = 0;
            if self.lr < self.min_lr {
                return SchedulerEvent::Stop;
            }
            return SchedulerEvent::Reduced;
        }
        SchedulerEvent::Keep
    }
}
