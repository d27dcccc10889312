//! PPO training loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ppo::{ppo_update, PpoConfig, UpdateStats};
use super::reward::RewardConfig;
use super::rollout::{collect_rollouts, EpisodePool, RolloutConfig, Worker};
use crate::agents::Assembly;
use crate::error::{Error, Result};
use crate::util::derive_seed;

/// Reward and goal-view variants of source training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingArm {
    /// View reward and view augmentation.
    Full,
    /// Distance-only reward with view augmentation.
    ViewAugOnly,
    /// View reward with fixed goal views.
    ViewRewardOnly,
    /// Distance-only reward with fixed goal views.
    Dtg,
}

impl TrainingArm {
    pub const ALL: [TrainingArm; 4] = [TrainingArm::Full, TrainingArm::ViewAugOnly, TrainingArm::ViewRewardOnly, TrainingArm::Dtg];

    pub fn name(self) -> &'static str {
        match self {
            TrainingArm::Full => "full",
            TrainingArm::ViewAugOnly => "view_aug_only",
            TrainingArm::ViewRewardOnly => "view_reward_only",
            TrainingArm::Dtg => "dtg",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    /// `base` with this arm's reward flags applied.
    pub fn reward(self, base: RewardConfig) -> RewardConfig {
        let (dtg_only, view_reward_only) = match self {
            TrainingArm::Full => (false, false),
            TrainingArm::ViewAugOnly => (true, false),
            TrainingArm::ViewRewardOnly => (false, true),
            TrainingArm::Dtg => (true, true),
        };
        RewardConfig { dtg_only, view_reward_only, ..base }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub seed: u64,
    pub workers: usize,
    pub rollout: RolloutConfig,
    pub ppo: PpoConfig,
    /// Parameter prefixes kept fixed during training.
    pub frozen: Vec<String>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self { seed: 0, workers: 4, rollout: RolloutConfig::default(), ppo: PpoConfig::default(), frozen: Vec::new() }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateLog {
    pub update: u64,
    /// Simulator steps summed over workers so far.
    pub env_steps: u64,
    /// Episodes finished during this update's collection.
    pub episodes: usize,
    pub mean_return: Option<f64>,
    pub success_rate: Option<f64>,
    #[serde(flatten)]
    pub stats: UpdateStats,
}

/// Collect-then-update loop over a fixed episode pool.
pub struct Trainer {
    pub assembly: Assembly,
    pool: EpisodePool,
    workers: Vec<Worker>,
    cfg: TrainerConfig,
    rng: ChaCha8Rng,
    updates: u64,
    env_steps: u64,
}

impl Trainer {
    /// Goal views in the pool are resampled on reset unless the reward
    /// configuration asks for fixed views.
    pub fn new(mut assembly: Assembly, pool: EpisodePool, cfg: TrainerConfig) -> Result<Self> {
        cfg.ppo.validate()?;
        cfg.rollout.env.reward.validate()?;
        if cfg.workers == 0 {
            return Err(Error::Config("at least one worker is required".into()));
        }
        for prefix in &cfg.frozen {
            assembly.params.freeze_prefix(prefix);
        }
        let view_aug = !cfg.rollout.env.reward.view_reward_only;
        Ok(Self {
            assembly,
            pool: pool.with_view_augmentation(view_aug),
            workers: Worker::spawn(cfg.workers, cfg.seed),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX)),
            cfg,
            updates: 0,
            env_steps: 0,
        })
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    /// One rollout collection followed by one PPO update.
    pub fn update(&mut self) -> Result<UpdateLog> {
        let mut buf = collect_rollouts(&self.assembly, &mut self.workers, &self.pool, &self.cfg.rollout)?;
        buf.compute_advantages(self.cfg.ppo.gamma, self.cfg.ppo.gae_lambda);
        let stats = ppo_update(&mut self.assembly, &buf, &self.cfg.ppo, &mut self.rng)?;
        self.updates += 1;
        self.env_steps += buf.len() as u64;
        let n = buf.completed.len();
        let (mean_return, success_rate) = if n == 0 {
            (None, None)
        } else {
            let ret = buf.completed.iter().map(|(_, r)| r).sum::<f64>() / n as f64;
            let succ = buf.completed.iter().filter(|(r, _)| r.success).count() as f64 / n as f64;
            (Some(ret), Some(succ))
        };
        Ok(UpdateLog { update: self.updates, env_steps: self.env_steps, episodes: n, mean_return, success_rate, stats })
    }
}
