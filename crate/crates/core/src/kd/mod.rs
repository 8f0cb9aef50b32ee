//! Self-supervised distillation from a frozen dense teacher into a compressed
//! student.
//!
//! Every session is split into its hot-item and cold-item subsequences; both
//! models encode each part, and the cold halves are swapped across models
//! to form two cross-model views of the session. Those views drive an
//! in-batch contrastive loss and a predictive loss, and the teacher's full
//! catalog distribution is distilled through a KL term.

mod losses;
mod partition;

pub use losses::{
    contrastive_loss, joint_loss, predictive_loss, recombined_views, soft_target_loss,
    soft_target_value,
    BatchLosses, KdHeads, KdModels,
};
pub use partition::{partition_hot_cold, recombine, split_session, HotColdPartition, SubSessions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distillation coefficients and schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdConfig {
    /// Weight of the contrastive loss.
    pub beta1: f64,
    /// Weight of the predictive loss.
    pub beta2: f64,
    /// Weight of the soft-target loss; the recommendation loss gets `1 - beta3`.
    pub beta3: f64,
    pub tau: f64,
    pub hot_fraction: f64,
}

impl Default for KdConfig {
    fn default() -> Self {
        KdConfig {
            beta1: 0.1,
            beta2: 0.001,
            beta3: 0.8,
            tau: 0.2,
            hot_fraction: 0.2,
        }
    }
}

impl KdConfig {
    pub fn retailrocket() -> Self {
        KdConfig {
            beta1: 0.005,
            beta2: 0.1,
            ..KdConfig::default()
        }
    }

    /// Pure recommendation loss.
    pub fn disabled() -> Self {
        KdConfig {
            beta1: 0.0,
            beta2: 0.0,
            beta3: 0.0,
            ..KdConfig::default()
        }
    }

    pub fn rec_weight(&self) -> f64 {
        1.0 - self.beta3
    }

    pub fn is_disabled(&self) -> bool {
        self.beta1 == 0.0 && self.beta2 == 0.0 && self.beta3 == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2), ("beta3", self.beta3)] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::config(name, format!("{v} must be finite and non-negative")));
            }
        }
        if self.beta3 >= 1.0 {
            return Err(Error::config(
                "beta3",
                format!("{} leaves no weight for the recommendation loss", self.beta3),
            ));
        }
        if self.tau <= 0.0 || !self.tau.is_finite() {
            return Err(Error::config("tau", format!("{} must be positive", self.tau)));
        }
        if !(self.hot_fraction > 0.0 && self.hot_fraction < 1.0) {
            return Err(Error::config(
                "hot_fraction",
                format!("{} is outside (0, 1)", self.hot_fraction),
            ));
        }
        Ok(())
    }
}
