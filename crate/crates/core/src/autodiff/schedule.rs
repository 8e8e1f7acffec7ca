use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Csr,
    Vsr,
}

/// Step-wise exponential decay: `initial_lr * decay_factor^(epoch / decay_every)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub stage: Stage,
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
}

impl LrSchedule {
    /// Coarse reconstruction stage: 1e-4, x0.7 every 10 epochs.
    pub fn csr() -> Self {
        LrSchedule { stage: Stage::Csr, initial_lr: 1e-4, decay_factor: 0.7, decay_every: 10 }
    }

    /// Refinement stage: 1e-4, x0.1 every 10 epochs.
    pub fn vsr() -> Self {
        LrSchedule { stage: Stage::Vsr, initial_lr: 1e-4, decay_factor: 0.1, decay_every: 10 }
    }

    pub fn with_initial_lr(self, initial_lr: f64) -> Self {
        LrSchedule { initial_lr, ..self }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.decay_every.max(1)) as i32;
        self.initial_lr * self.decay_factor.powi(steps)
    }
}
