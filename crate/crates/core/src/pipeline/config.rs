use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, LrSchedule};
use crate::error::{Error, Result};
use crate::losses::LossVariant;
use crate::network::ModelConfig;

/// Which view feeds the 2D encoder during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainView {
    /// View 0 for every object.
    #[default]
    Canonical,
    /// View `(epoch + object) mod I`, so every view is visited once per `I`
    /// epochs.
    Cycle,
}

/// Everything a training run depends on; echoed into checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset manifest.
    pub dataset: PathBuf,
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub csr_schedule: LrSchedule,
    pub vsr_schedule: LrSchedule,
    pub batch_size: usize,
    pub epochs_csr: usize,
    pub epochs_vsr: usize,
    pub loss: LossVariant,
    /// Views used by the calibrator; 0 disables it.
    pub calibration_views: usize,
    pub train_view: TrainView,
    /// Shuffles the sample order of every epoch.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::from("data/manifest.json"),
            model: ModelConfig::paper(),
            adam: AdamConfig::default(),
            csr_schedule: LrSchedule::csr(),
            vsr_schedule: LrSchedule::vsr(),
            batch_size: 32,
            epochs_csr: 200,
            epochs_vsr: 50,
            loss: LossVariant::Squared,
            calibration_views: 1,
            train_view: TrainView::Canonical,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Reduced model and schedule that trains on one CPU core in minutes.
    pub fn desk() -> Self {
        RunConfig {
            model: ModelConfig::desk(),
            csr_schedule: LrSchedule::csr().with_initial_lr(1e-3),
            vsr_schedule: LrSchedule::vsr().with_initial_lr(1e-3),
            batch_size: 4,
            epochs_csr: 30,
            epochs_vsr: 10,
            ..RunConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        for (name, v) in [("batch_size", self.batch_size), ("epochs_csr", self.epochs_csr), ("epochs_vsr", self.epochs_vsr)] {
            if v == 0 {
                return Err(Error::Invalid(format!("{name} must be positive")));
            }
        }
        for s in [&self.csr_schedule, &self.vsr_schedule] {
            if !(s.initial_lr > 0.0 && s.decay_factor > 0.0 && s.decay_every > 0) {
                return Err(Error::Invalid(format!("learning-rate schedule {s:?}")));
            }
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(Error::Invalid(format!("adam settings {a:?}")));
        }
        Ok(())
    }
}
