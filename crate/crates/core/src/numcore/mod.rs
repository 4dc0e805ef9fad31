//! Dense tensors, reverse-mode gradients for a fixed layer inventory,
//! Adam, a plateau scheduler, initialisers and gradient checking.

mod gradcheck;
mod init;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{gradcheck, gradcheck_with, rel_error, GradEntry, GradcheckReport, REL_FLOOR};
pub use init::{xavier_bound, xavier_uniform, zero_bias};
pub use optim::{Adam, PlateauScheduler, SchedulerEvent};
pub use params::{ParameterStore, Slot, SlotKind};
pub use tape::{
    apply_bn_updates, sigmoid, softmax_in_place, BlockEdges, BnLayout, BnUpdate, Tape, Var, BN_EPS, BN_MOMENTUM,
    PROB_FLOOR,
};
pub use tensor::Tensor2;

use serde::{Deserialize, Serialize};

/// Optimisation protocol shared by every model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_min: f64,
    pub patience: usize,
    pub lr_factor: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Seconds; exhausting it ends training cleanly.
    pub budget_secs: f64,
    pub seed: u64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            lr_min: 1e-5,
            patience: 10,
            lr_factor: 0.5,
            max_epochs: 1000,
            batch_size: 100,
            budget_secs: 12.0 * 3600.0,
            seed: 789,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> crate::error::Result<()> {
        let bad = |m: &str| Err(crate::error::Error::Config(m.to_string()));
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad("lr_factor must lie in (0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr0 > 0.0) || !(self.lr_min >= 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.budget_secs > 0.0) {
            return bad("budget must be positive");
        }
        Ok(())
    }
}
