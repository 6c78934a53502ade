//! Intrinsic reward composition per training mode, and fine-tuning reward clipping.

use std::fmt;
use std::str::FromStr;

use crate::entropy::ParticleBatch;
use crate::error::{Error, Result};
use crate::features::{FeatureVector, TaskVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RewardMode {
    /// Entropy plus successor-feature exploitation: `max H(s) - H(s|z)`.
    Aps,
    /// Entropy only: `max H(s)`.
    Apt,
    /// Exploitation only: `max H(z) - H(z|s)`.
    Visr,
    /// Environment reward; only valid while fine-tuning.
    Extrinsic,
}

impl RewardMode {
    pub const PRETRAIN_MODES: [RewardMode; 3] = [RewardMode::Aps, RewardMode::Apt, RewardMode::Visr];

    pub fn as_str(self) -> &'static str {
        match self {
            RewardMode::Aps => "aps",
            RewardMode::Apt => "apt",
            RewardMode::Visr => "visr",
            RewardMode::Extrinsic => "extrinsic",
        }
    }

    pub fn uses_exploitation(self) -> bool {
        matches!(self, RewardMode::Aps | RewardMode::Visr)
    }

    pub fn uses_exploration(self) -> bool {
        matches!(self, RewardMode::Aps | RewardMode::Apt)
    }

    /// Whether the encoder is trained with the VMF loss in this mode.
    pub fn trains_encoder(self) -> bool {
        self.uses_exploitation()
    }

    /// Combines already computed exploitation and exploration terms.
    pub fn compose(self, exploitation: f64, exploration: f64) -> Result<f64> {
        match self {
            RewardMode::Aps => Ok(exploitation + exploration),
            RewardMode::Apt => Ok(exploration),
            RewardMode::Visr => Ok(exploitation),
            RewardMode::Extrinsic => Err(Error::ModeMismatch {
                mode: self.to_string(),
                phase: "intrinsic reward computation",
            }),
        }
    }
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aps" => Ok(RewardMode::Aps),
            "apt" => Ok(RewardMode::Apt),
            "visr" => Ok(RewardMode::Visr),
            "extrinsic" => Ok(RewardMode::Extrinsic),
            _ => Err(Error::Config {
                key: "mode".into(),
                message: format!("unknown mode `{s}` (expected aps, apt or visr)"),
            }),
        }
    }
}

/// Intrinsic reward of particle `i`, whose encoding is `phi_next`.
pub fn intrinsic_reward(
    mode: RewardMode,
    phi_next: &FeatureVector,
    w: &TaskVector,
    batch: &ParticleBatch,
    i: usize,
) -> Result<f64> {
    let exploitation = if mode.uses_exploitation() {
        phi_next.dot(w)
    } else {
        0.0
    };
    let exploration = if mode.uses_exploration() {
        batch.entropy_reward(i)?
    } else {
        0.0
    };
    mode.compose(exploitation, exploration)
}

pub fn clip_reward(r: f64) -> f64 {
    r.clamp(-1.0, 1.0)
}
