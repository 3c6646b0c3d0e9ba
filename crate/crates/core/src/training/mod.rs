//! Synthetic data, optimisation and evaluation.

mod checkpoint;
mod data;
mod phantom;
mod rmsprop;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelConfig;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, FORMAT_VERSION};
pub use data::{derive_seed, prepare_slice, PreparedSlice};
pub use phantom::{make_phantom_dataset, PhantomSample, PhantomSpec};
pub use rmsprop::RmsProp;
pub use trainer::{evaluate, ssim_loss, Reconstructor, TrainSummary, Trainer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::lr")]
    pub learning_rate: f64,
    /// First epoch (0-based) trained at `decayed_learning_rate`.
    #[serde(default = "defaults::decay_epoch")]
    pub decay_epoch: usize,
    #[serde(default = "defaults::decayed_lr")]
    pub decayed_learning_rate: f64,
    #[serde(default = "defaults::rho")]
    pub rmsprop_rho: f64,
    #[serde(default = "defaults::eps")]
    pub rmsprop_eps: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::center_fraction")]
    pub center_fraction: f64,
    #[serde(default = "defaults::acceleration")]
    pub acceleration: f64,
    /// Draw a fresh mask for every training slice each epoch instead of one
    /// fixed mask per slice.
    #[serde(default)]
    pub rerandomize_masks: bool,
}

mod defaults {
    pub fn batch_size() -> usize {
        4
    }
    pub fn lr() -> f64 {
        1e-3
    }
    pub fn decay_epoch() -> usize {
        40
    }
    pub fn decayed_lr() -> f64 {
        1e-4
    }
    pub fn rho() -> f64 {
        0.99
    }
    pub fn eps() -> f64 {
        1e-8
    }
    pub fn center_fraction() -> f64 {
        0.08
    }
    pub fn acceleration() -> f64 {
        4.0
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: defaults::batch_size(),
            learning_rate: defaults::lr(),
            decay_epoch: defaults::decay_epoch(),
            decayed_learning_rate: defaults::decayed_lr(),
            rmsprop_rho: defaults::rho(),
            rmsprop_eps: defaults::eps(),
            seed: 0,
            center_fraction: defaults::center_fraction(),
            acceleration: defaults::acceleration(),
            rerandomize_masks: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs as f64),
            ("batch_size", self.batch_size as f64),
            ("learning_rate", self.learning_rate),
            ("decayed_learning_rate", self.decayed_learning_rate),
            ("rmsprop_rho", self.rmsprop_rho),
            ("rmsprop_eps", self.rmsprop_eps),
            ("center_fraction", self.center_fraction),
            ("acceleration", self.acceleration),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("train config: {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Step schedule: the initial rate before `decay_epoch`, the decayed one after.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if epoch < self.decay_epoch {
            self.learning_rate
        } else {
            self.decayed_learning_rate
        }
    }
}

/// The JSON run configuration: `{"model": {...}, "train": {...}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_switches_at_decay_epoch() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate_at(0), 0.001);
        assert_eq!(cfg.learning_rate_at(39), 0.001);
        assert_eq!(cfg.learning_rate_at(40), 0.0001);
        assert_eq!(cfg.learning_rate_at(49), 0.0001);
    }

    #[test]
    fn run_config_parses_with_defaults() {
        let cfg = RunConfig::from_json(
            r#"{"model": {"c_v": 8, "c_k": 4, "L": 2, "T": 2}, "train": {"epochs": 3, "seed": 7}}"#,
        )
        .unwrap();
        assert_eq!(cfg.model.levels, 2);
        assert_eq!(cfg.model.leaky_slope, 0.2);
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.train.acceleration, 4.0);
    }

    #[test]
    fn run_config_rejects_unknown_fields_and_odd_ck() {
        assert!(RunConfig::from_json(r#"{"model": {"c_v": 8, "c_k": 4, "L": 2, "T": 2, "x": 1}, "train": {"epochs": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"model": {"c_v": 8, "c_k": 3, "L": 2, "T": 2}, "train": {"epochs": 1}}"#).is_err());
    }
}
