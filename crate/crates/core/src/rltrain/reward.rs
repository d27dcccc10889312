//! View reward and success reward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::worldgen::normalize_angle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Success distance d_s in meters.
    pub success_distance: f64,
    /// View-alignment threshold alpha_s in radians.
    pub success_angle: f64,
    /// Per-step slack penalty.
    pub slack: f64,
    /// Reward per satisfied success indicator.
    pub success_base: f64,
    /// Distance-only shaping: the angle symbols never enter any reward.
    pub dtg_only: bool,
    /// Keep each training episode's goal view fixed instead of resampling
    /// it on every reset, so view information reaches the agent only
    /// through the reward.
    pub view_reward_only: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { success_distance: 1.0, success_angle: 25f64.to_radians(), slack: 0.01, success_base: 5.0, dtg_only: false, view_reward_only: false }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.success_distance > 0.0) {
            return Err(Error::Config(format!("success distance must be > 0, got {}", self.success_distance)));
        }
        if !(self.success_angle > 0.0 && self.success_angle <= std::f64::consts::PI) {
            return Err(Error::Config(format!("success angle must be in (0, pi], got {}", self.success_angle)));
        }
        if !(self.slack >= 0.0) {
            return Err(Error::Config(format!("slack must be >= 0, got {}", self.slack)));
        }
        Ok(())
    }

    /// The same configuration with the angle terms removed.
    pub fn distance_only(self) -> Self {
        Self { dtg_only: true, ..self }
    }
}

/// `r_t = (d_{t-1} - d_t) + [d_t <= d_s] (alpha_{t-1} - alpha_t) - slack`,
/// without the angle term when `dtg_only` is set.
pub fn compute_step_reward(d_t: f64, d_prev: f64, alpha_t: f64, alpha_prev: f64, cfg: &RewardConfig) -> f64 {
    let mut r = (d_prev - d_t) - cfg.slack;
    if !cfg.dtg_only && d_t <= cfg.success_distance {
        r += alpha_prev - alpha_t;
    }
    r
}

/// `success_base * ([d_t <= d_s] + [d_t <= d_s and alpha_t <= alpha_s])`
/// when the agent stopped, otherwise 0. With `dtg_only` both indicators
/// reduce to the distance test.
pub fn compute_success_reward(d_t: f64, alpha_t: f64, stopped: bool, cfg: &RewardConfig) -> f64 {
    if !stopped || d_t > cfg.success_distance {
        return 0.0;
    }
    let aligned = cfg.dtg_only || alpha_t <= cfg.success_angle;
    cfg.success_base * (1.0 + if aligned { 1.0 } else { 0.0 })
}

/// Absolute heading difference wrapped to `[0, pi]`.
pub fn angle_to_goal_view(agent_heading: f64, goal_view_heading: f64) -> f64 {
    let t = normalize_angle(agent_heading - goal_view_heading);
    if t > std::f64::consts::PI {
        std::f64::consts::TAU - t
    } else {
        t
    }
}
