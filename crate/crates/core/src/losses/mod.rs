//! Reconstruction metrics and training objectives.

pub mod adversarial;
mod metrics;
mod ssim;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use adversarial::{
    critic_loss, generator_loss, gradient_penalty, Critic, CriticLoss, LinearCritic,
};
pub use metrics::{l1_loss, l2_loss, soft_dice_loss, DICE_EPSILON};
pub use ssim::{gaussian_window, ssim, ssim_loss, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Plain U-Net regression on soft Dice, no critic.
    Dice,
    WganGp,
    WganGpL1,
}

impl Objective {
    pub fn is_adversarial(self) -> bool {
        !matches!(self, Objective::Dice)
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Dice => "dice",
            Objective::WganGp => "wgan_gp",
            Objective::WganGpL1 => "wgan_gp_l1",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub objective: Objective,
    pub l1_weight: f64,
    pub gp_lambda: f64,
    pub critic_steps: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            objective: Objective::WganGpL1,
            l1_weight: 100.0,
            gp_lambda: 10.0,
            critic_steps: 5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l1_weight >= 0.0) {
            return Err(Error::Config(format!(
                "l1_weight must be >= 0, got {}",
                self.l1_weight
            )));
        }
        if !(self.gp_lambda >= 0.0) {
            return Err(Error::Config(format!(
                "gp_lambda must be >= 0, got {}",
                self.gp_lambda
            )));
        }
        if self.critic_steps == 0 {
            return Err(Error::Config("critic_steps must be >= 1".into()));
        }
        Ok(())
    }
}
