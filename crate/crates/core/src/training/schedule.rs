use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augment {
    None,
    /// A fresh random column order for every sample.
    DynamicPermutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSchedule {
    pub max_epochs: usize,
    /// Epochs without a validation-AUC improvement before stopping.
    pub patience: usize,
    /// Share of the optimizer steps during which λ stays 0.
    pub warmup_fraction: f64,
    pub augment: Augment,
    pub seed: u64,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            max_epochs: 10,
            patience: 3,
            warmup_fraction: 0.1,
            augment: Augment::None,
            seed: 0,
        }
    }
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::protocol("max_epochs must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::protocol("patience must be positive"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::protocol(format!(
                "warmup_fraction {} outside [0, 1)",
                self.warmup_fraction
            )));
        }
        Ok(())
    }
}

/// Adversarial strength at optimizer step `t` of `total`: zero during the
/// warmup `w * total`, then a half-cosine ramp to 1 at `total`; steps past
/// the end stay at 1.
pub fn lambda_at(t: f64, total: f64, warmup_fraction: f64) -> f64 {
    let start = warmup_fraction * total;
    if t >= total {
        return 1.0;
    }
    if t < start {
        return 0.0;
    }
    0.5 * (1.0 - (PI * (t - start) / (total - start)).cos())
}
