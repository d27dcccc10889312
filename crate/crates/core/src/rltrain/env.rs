//! Discrete-action navigation environment.

use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::reward::{angle_to_goal_view, compute_step_reward, compute_success_reward, RewardConfig};
use crate::agents::Action;
use crate::episodes::{Difficulty, EpisodeSpec, Task};
use crate::error::{Error, Result};
use crate::render::{derive_audio, render_observation, GoalDescriptor, Observation, RenderConfig, AUDIO_NOISE_SCALE};
use crate::worldgen::{DistanceField, FloorPlan, Pose};

/// Forward displacement in meters.
pub const FORWARD_STEP: f64 = 0.25;
/// Turn angle in radians (30 degrees).
pub const TURN_ANGLE: f64 = std::f64::consts::PI / 6.0;
/// Gap kept between the agent and a wall it runs into.
pub const CONTACT_MARGIN: f64 = 1e-6;

/// Zero-mean Gaussian actuation noise truncated at two standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuationNoise {
    /// Translation noise of forward moves, meters.
    pub translation_sigma: f64,
    /// Heading noise of every motion action, radians.
    pub rotation_sigma: f64,
}

impl Default for ActuationNoise {
    fn default() -> Self {
        Self { translation_sigma: 0.05, rotation_sigma: 5f64.to_radians() }
    }
}

fn truncated_normal(sigma: f64, rng: &mut dyn RngCore) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    loop {
        let v: f64 = n.sample(rng);
        if v.abs() <= 2.0 * sigma {
            return v;
        }
    }
}

/// Distance from `(x, y)` along `angle` to the first wall or grid boundary,
/// capped at `max`. Grazing a wall corner exactly counts as contact.
pub fn free_distance(plan: &FloorPlan, x: f64, y: f64, angle: f64, max: f64) -> f64 {
    let cs = plan.cell_size();
    let (dx, dy) = (angle.cos(), angle.sin());
    let Some(start) = plan.cell_of_point(x, y) else { return 0.0 };
    if !plan.is_free(start) {
        return 0.0;
    }
    let (mut col, mut row) = (start.col as isize, start.row as isize);
    let step_c: isize = if dx > 0.0 { 1 } else { -1 };
    let step_r: isize = if dy > 0.0 { 1 } else { -1 };
    let boundary = |cell: isize, step: isize| (if step > 0 { cell + 1 } else { cell }) as f64 * cs;
    let mut t_c = if dx.abs() < 1e-12 { f64::INFINITY } else { (boundary(col, step_c) - x) / dx };
    let mut t_r = if dy.abs() < 1e-12 { f64::INFINITY } else { (boundary(row, step_r) - y) / dy };
    let dt_c = if dx.abs() < 1e-12 { f64::INFINITY } else { cs / dx.abs() };
    let dt_r = if dy.abs() < 1e-12 { f64::INFINITY } else { cs / dy.abs() };
    loop {
        let t = t_c.min(t_r);
        if t >= max {
            return max;
        }
        if t_c == t_r {
            // Exact corner crossing: blocked if any of the three cells ahead is a wall.
            let blocked = !plan.is_free_signed(row, col + step_c)
                || !plan.is_free_signed(row + step_r, col)
                || !plan.is_free_signed(row + step_r, col + step_c);
            if blocked {
                return t;
            }
            col += step_c;
            row += step_r;
            t_c += dt_c;
            t_r += dt_r;
        } else if t_c < t_r {
            col += step_c;
            if !plan.is_free_signed(row, col) {
                return t;
            }
            t_c += dt_c;
        } else {
            row += step_r;
            if !plan.is_free_signed(row, col) {
                return t;
            }
            t_r += dt_r;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub pose: Pose,
    pub collided: bool,
}

/// Apply one action to a pose. Forward moves stop at wall contact; turns
/// rotate by [`TURN_ANGLE`]; stop leaves the pose unchanged. With noise,
/// forward distance and the heading after any motion are perturbed.
pub fn env_step(plan: &FloorPlan, pose: &Pose, action: Action, noise: Option<(&ActuationNoise, &mut dyn RngCore)>) -> Result<StepResult> {
    plan.pose_cell(pose)?;
    let (dist_noise, rot_noise) = match (action, noise) {
        (Action::Stop, _) | (_, None) => (0.0, 0.0),
        (Action::MoveForward, Some((n, rng))) => {
            let d = truncated_normal(n.translation_sigma, rng);
            (d, truncated_normal(n.rotation_sigma, rng))
        }
        (_, Some((n, rng))) => (0.0, truncated_normal(n.rotation_sigma, rng)),
    };
    match action {
        Action::Stop => Ok(StepResult { pose: *pose, collided: false }),
        Action::TurnLeft => Ok(StepResult { pose: Pose::new(pose.x, pose.y, pose.heading + TURN_ANGLE + rot_noise), collided: false }),
        Action::TurnRight => Ok(StepResult { pose: Pose::new(pose.x, pose.y, pose.heading - TURN_ANGLE + rot_noise), collided: false }),
        Action::MoveForward => {
            let want = (FORWARD_STEP + dist_noise).max(0.0);
            let free = free_distance(plan, pose.x, pose.y, pose.heading, want + CONTACT_MARGIN);
            let (t, collided) = if free < want + CONTACT_MARGIN { ((free - CONTACT_MARGIN).max(0.0), true) } else { (want, false) };
            let moved = Pose::new(pose.x + t * pose.heading.cos(), pose.y + t * pose.heading.sin(), pose.heading + rot_noise);
            // Guard against rounding placing the agent on the far side of a boundary.
            let moved = if plan.pose_cell(&moved).is_ok() { moved } else { Pose::new(pose.x, pose.y, moved.heading) };
            Ok(StepResult { pose: moved, collided })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub render: RenderConfig,
    pub reward: RewardConfig,
    pub noise: Option<ActuationNoise>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { render: RenderConfig::default(), reward: RewardConfig::default(), noise: None }
    }
}

/// Outcome of one finished (or truncated) episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_id: u64,
    pub task: Task,
    pub difficulty: Difficulty,
    pub success: bool,
    /// Length of the path the agent walked, meters.
    pub path_length: f64,
    /// Shortest-path length from start to goal, meters.
    pub shortest_length: f64,
    pub steps: u32,
    pub stopped: bool,
    pub final_distance: f64,
    /// Angle to the goal view at the end; 0 for tasks without one.
    pub final_angle: f64,
}

/// One environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub pose: Pose,
    pub reward: f64,
    pub done: bool,
    pub collided: bool,
    pub distance: f64,
    pub angle: f64,
}

/// A running episode: pose, step budget, shaping state and the current goal.
pub struct NavEnv {
    plan: Arc<FloorPlan>,
    episode: EpisodeSpec,
    field: DistanceField,
    render: RenderConfig,
    reward: RewardConfig,
    noise: Option<ActuationNoise>,
    rng: ChaCha8Rng,
    pose: Pose,
    steps: u32,
    done: bool,
    stopped: bool,
    path_length: f64,
    distance: f64,
    angle: f64,
    goal: GoalDescriptor,
    trajectory: Vec<Pose>,
}

impl NavEnv {
    /// Start `episode` on `plan`; `noise_seed` drives actuation noise.
    pub fn new(plan: Arc<FloorPlan>, episode: EpisodeSpec, cfg: &EnvConfig, noise_seed: u64) -> Result<Self> {
        if episode.plan_id != plan.seed() {
            return Err(Error::Config(format!("episode {} belongs to plan {}, not {}", episode.id, episode.plan_id, plan.seed())));
        }
        cfg.reward.validate()?;
        let field = DistanceField::from_sources(&plan, &episode.goal_cells(&plan)?)?;
        let pose = episode.start;
        let distance = field.at_pose(&plan, &pose)?.ok_or(Error::Unreachable)?;
        let mut env = Self {
            angle: 0.0,
            goal: episode.goal.clone(),
            plan,
            field,
            render: cfg.render,
            reward: cfg.reward,
            noise: cfg.noise,
            rng: ChaCha8Rng::seed_from_u64(noise_seed),
            pose,
            steps: 0,
            done: false,
            stopped: false,
            path_length: 0.0,
            distance,
            trajectory: vec![pose],
            episode,
        };
        env.angle = env.angle_at(&pose);
        env.refresh_goal()?;
        Ok(env)
    }

    pub fn plan(&self) -> &Arc<FloorPlan> {
        &self.plan
    }

    pub fn episode(&self) -> &EpisodeSpec {
        &self.episode
    }

    pub fn field(&self) -> &DistanceField {
        &self.field
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn trajectory(&self) -> &[Pose] {
        &self.trajectory
    }

    /// The goal as currently perceived. Audio goals fade with the current
    /// distance; every other goal is fixed for the episode.
    pub fn goal(&self) -> &GoalDescriptor {
        &self.goal
    }

    /// Reward configuration in effect for this episode's task.
    pub fn reward_config(&self) -> RewardConfig {
        task_reward_config(self.episode.task, &self.reward)
    }

    pub fn observe(&self) -> Result<Observation> {
        render_observation(&self.plan, &self.pose, &self.render)
    }

    fn angle_at(&self, pose: &Pose) -> f64 {
        if self.episode.task.has_goal_view() {
            angle_to_goal_view(pose.heading, self.episode.goal_view_heading)
        } else {
            0.0
        }
    }

    fn refresh_goal(&mut self) -> Result<()> {
        if let (GoalDescriptor::Audio(_), Some(c)) = (&self.goal, self.episode.target_category) {
            self.goal = derive_audio(c, self.distance, self.episode.goal_seed.unwrap_or(0), AUDIO_NOISE_SCALE)?;
        }
        Ok(())
    }

    /// Whether stopping at the current state counts as success.
    pub fn at_goal(&self) -> bool {
        self.distance <= self.reward_config().success_distance
    }

    pub fn step(&mut self, action: Action) -> Result<Transition> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let noise = self.noise;
        let res = match &noise {
            Some(n) => env_step(&self.plan, &self.pose, action, Some((n, &mut self.rng as &mut dyn RngCore)))?,
            None => env_step(&self.plan, &self.pose, action, None)?,
        };
        let distance = self.field.at_pose(&self.plan, &res.pose)?.ok_or(Error::Unreachable)?;
        let angle = self.angle_at(&res.pose);
        let cfg = self.reward_config();
        let stopped = action == Action::Stop;
        let reward = compute_step_reward(distance, self.distance, angle, self.angle, &cfg) + compute_success_reward(distance, angle, stopped, &cfg);
        self.path_length += res.pose.euclidean(&self.pose);
        self.pose = res.pose;
        self.distance = distance;
        self.angle = angle;
        self.steps += 1;
        self.stopped = stopped;
        self.done = stopped || self.steps >= self.episode.max_steps;
        self.trajectory.push(res.pose);
        self.refresh_goal()?;
        Ok(Transition { pose: res.pose, reward, done: self.done, collided: res.collided, distance, angle })
    }

    pub fn result(&self) -> EpisodeResult {
        EpisodeResult {
            episode_id: self.episode.id,
            task: self.episode.task,
            difficulty: self.episode.difficulty,
            success: self.stopped && self.at_goal(),
            path_length: self.path_length,
            shortest_length: self.episode.shortest_length,
            steps: self.steps,
            stopped: self.stopped,
            final_distance: self.distance,
            final_angle: self.angle,
        }
    }
}

/// Reward configuration specialized to a task: RoomNav requires standing
/// inside the room (distance 0), and tasks without a goal view never see an
/// angle (it stays 0).
pub fn task_reward_config(task: Task, base: &RewardConfig) -> RewardConfig {
    match task {
        Task::RoomNav => RewardConfig { success_distance: 0.0, ..*base },
        _ => *base,
    }
}
