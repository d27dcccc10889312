//! Navigation environment, rewards, expert teacher and PPO training.

pub mod augment;
pub mod env;
pub mod ppo;
pub mod reward;
pub mod rollout;
pub mod teacher;
pub mod trainer;

pub use augment::{augment_goal, augment_image, crop_resize, AugmentConfig};
pub use env::{
    env_step, free_distance, task_reward_config, ActuationNoise, EnvConfig, EpisodeResult, NavEnv, StepResult, Transition, CONTACT_MARGIN,
    FORWARD_STEP, TURN_ANGLE,
};
pub use ppo::{ppo_loss, ppo_update, surrogate_objective, LossInputs, LossTerms, PpoConfig, UpdateStats};
pub use reward::{angle_to_goal_view, compute_step_reward, compute_success_reward, RewardConfig};
pub use rollout::{collect_rollouts, compute_gae, normalize_advantages, EpisodePool, RolloutBuffer, RolloutConfig, Worker};
pub use teacher::{
    distance_estimate, imitation_teacher, line_of_sight, plan_actions, signed_angle, turn_towards, Teacher, ESTIMATE_RADIUS, SEARCH_BUDGET,
};
pub use trainer::{Trainer, TrainerConfig, TrainingArm, UpdateLog};
