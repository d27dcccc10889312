//! Flat `key = value` experiment configuration.

use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::episodes::{Difficulty, Task};
use crate::error::{Error, Result};
use crate::render::Modality;
use crate::rltrain::TrainingArm;
use crate::worldgen::GeneratorStyle;

/// Which modules an assembly takes from earlier runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TransferSet {
    pub fo: bool,
    pub fg: bool,
    pub pi: bool,
}

impl TransferSet {
    pub const ALL: TransferSet = TransferSet { fo: true, fg: true, pi: true };
    pub const NONE: TransferSet = TransferSet { fo: false, fg: false, pi: false };

    pub fn is_none(&self) -> bool {
        *self == Self::NONE
    }
}

impl Display for TransferSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<&str> = [(self.fo, "fo"), (self.fg, "fg"), (self.pi, "pi")].iter().filter(|(on, _)| *on).map(|(_, n)| *n).collect();
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

impl FromStr for TransferSet {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut t = TransferSet::NONE;
        if s.trim() == "none" {
            return Ok(t);
        }
        for part in s.split(',').map(str::trim) {
            match part {
                "fo" => t.fo = true,
                "fg" => t.fg = true,
                "pi" => t.pi = true,
                "all" => t = TransferSet::ALL,
                other => return Err(format!("unknown module `{other}` (expected fo, fg, pi, all or none)")),
            }
        }
        Ok(t)
    }
}

/// Every setting of an experiment; all of it is echoed into result files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Seed of everything except world and episode-set sampling.
    pub seed: u64,
    /// Seed of the training and evaluation worlds and episode sets.
    pub world_seed: u64,
    pub task: Task,
    pub modality: Modality,
    pub train_plans: usize,
    pub eval_plans: usize,
    /// Plan side in cells.
    pub plan_size: usize,
    pub plan_style: GeneratorStyle,
    /// Render width and height in pixels.
    pub resolution: usize,
    /// Training episodes sampled per training plan.
    pub train_episodes: usize,
    pub train_difficulty: Option<Difficulty>,
    pub eval_episodes: usize,
    pub eval_difficulty: Option<Difficulty>,
    pub eval_seeds: usize,
    pub greedy: bool,
    pub workers: usize,
    pub horizon: usize,
    /// Training budget in environment steps.
    pub train_steps: u64,
    /// Environment steps between evaluations (0: only at the end).
    pub eval_every: u64,
    /// Environment steps between checkpoints (0: only at the end).
    pub checkpoint_every: u64,
    pub lr: f64,
    pub entropy_coef: f64,
    pub ppo_epochs: usize,
    pub minibatches: usize,
    pub chunk_len: usize,
    pub arm: TrainingArm,
    pub noisy_actuation: bool,
    /// Source-training checkpoint supplying transferred modules.
    pub source: Option<PathBuf>,
    /// Aligned goal-encoder checkpoint.
    pub goal_encoder: Option<PathBuf>,
    pub transfer: TransferSet,
    /// Parameter prefixes kept fixed during fine-tuning.
    pub freeze: TransferSet,
    pub pairs: usize,
    pub probes: usize,
    pub align_epochs: usize,
    pub align_batch: usize,
    pub align_lr: f64,
    /// Success rate used for the steps-to-reference statistic.
    pub reference_succ: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            world_seed: 1000,
            task: Task::ImageNav,
            modality: Modality::Image,
            train_plans: 8,
            eval_plans: 4,
            plan_size: 128,
            plan_style: GeneratorStyle::A,
            resolution: 32,
            train_episodes: 200,
            train_difficulty: None,
            eval_episodes: 200,
            eval_difficulty: None,
            eval_seeds: 3,
            greedy: true,
            workers: 4,
            horizon: 128,
            train_steps: 3_000_000,
            eval_every: 0,
            checkpoint_every: 0,
            lr: 2.5e-4,
            entropy_coef: 0.01,
            ppo_epochs: 2,
            minibatches: 2,
            chunk_len: 32,
            arm: TrainingArm::Full,
            noisy_actuation: false,
            source: None,
            goal_encoder: None,
            transfer: TransferSet::ALL,
            freeze: TransferSet::NONE,
            pairs: 2000,
            probes: 1000,
            align_epochs: 50,
            align_batch: 64,
            align_lr: 1e-3,
            reference_succ: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String>
where
    T::Err: Display,
{
    value.parse::<T>().map_err(|e| format!("invalid value `{value}` for `{key}`: {e}"))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> std::result::Result<Option<T>, String>
where
    T::Err: Display,
{
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn named<T>(key: &str, value: &str, f: impl Fn(&str) -> Option<T>) -> std::result::Result<T, String> {
    f(value).ok_or_else(|| format!("invalid value `{value}` for `{key}`"))
}

fn opt_str<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

impl ExperimentConfig {
    /// Every configuration key, in echo order.
    pub const KEYS: [&'static str; 37] = [
        "seed",
        "world_seed",
        "task",
        "modality",
        "train_plans",
        "eval_plans",
        "plan_size",
        "plan_style",
        "resolution",
        "train_episodes",
        "train_difficulty",
        "eval_episodes",
        "eval_difficulty",
        "eval_seeds",
        "greedy",
        "workers",
        "horizon",
        "train_steps",
        "eval_every",
        "checkpoint_every",
        "lr",
        "entropy_coef",
        "ppo_epochs",
        "minibatches",
        "chunk_len",
        "arm",
        "noisy_actuation",
        "source",
        "goal_encoder",
        "transfer",
        "freeze",
        "pairs",
        "probes",
        "align_epochs",
        "align_batch",
        "align_lr",
        "reference_succ",
    ];

    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "world_seed" => self.world_seed = parse(key, v)?,
            "task" => {
                self.task = named(key, v, Task::from_name)?;
                if !self.task.modalities().contains(&self.modality) {
                    self.modality = self.task.default_modality();
                }
            }
            "modality" => self.modality = named(key, v, Modality::from_name)?,
            "train_plans" => self.train_plans = parse(key, v)?,
            "eval_plans" => self.eval_plans = parse(key, v)?,
            "plan_size" => self.plan_size = parse(key, v)?,
            "resolution" => self.resolution = parse(key, v)?,
            "train_episodes" => self.train_episodes = parse(key, v)?,
            "train_difficulty" => self.train_difficulty = if v == "all" { None } else { Some(named(key, v, Difficulty::from_name)?) },
            "eval_episodes" => self.eval_episodes = parse(key, v)?,
            "eval_difficulty" => self.eval_difficulty = if v == "all" { None } else { Some(named(key, v, Difficulty::from_name)?) },
            "eval_seeds" => self.eval_seeds = parse(key, v)?,
            "greedy" => self.greedy = parse(key, v)?,
            "workers" => self.workers = parse(key, v)?,
            "horizon" => self.horizon = parse(key, v)?,
            "train_steps" => self.train_steps = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "entropy_coef" => self.entropy_coef = parse(key, v)?,
            "ppo_epochs" => self.ppo_epochs = parse(key, v)?,
            "minibatches" => self.minibatches = parse(key, v)?,
            "chunk_len" => self.chunk_len = parse(key, v)?,
            "arm" => self.arm = named(key, v, TrainingArm::from_name)?,
            "noisy_actuation" => self.noisy_actuation = parse(key, v)?,
            "source" => self.source = parse_opt(key, v)?,
            "goal_encoder" => self.goal_encoder = parse_opt(key, v)?,
            "transfer" => self.transfer = parse(key, v)?,
            "freeze" => self.freeze = parse(key, v)?,
            "pairs" => self.pairs = parse(key, v)?,
            "probes" => self.probes = parse(key, v)?,
            "align_epochs" => self.align_epochs = parse(key, v)?,
            "align_batch" => self.align_batch = parse(key, v)?,
            "align_lr" => self.align_lr = parse(key, v)?,
            "reference_succ" => self.reference_succ = parse_opt(key, v)?,
            "plan_style" => self.plan_style = named(key, v, GeneratorStyle::from_name)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Text form of one key.
    pub fn get(&self, key: &str) -> Option<String> {
        let diff = |d: &Option<Difficulty>| d.map_or_else(|| "all".to_string(), |d| d.name().to_string());
        Some(match key {
            "seed" => self.seed.to_string(),
            "world_seed" => self.world_seed.to_string(),
            "task" => self.task.name().to_string(),
            "modality" => self.modality.name().to_string(),
            "train_plans" => self.train_plans.to_string(),
            "eval_plans" => self.eval_plans.to_string(),
            "plan_size" => self.plan_size.to_string(),
            "resolution" => self.resolution.to_string(),
            "train_episodes" => self.train_episodes.to_string(),
            "train_difficulty" => diff(&self.train_difficulty),
            "eval_episodes" => self.eval_episodes.to_string(),
            "eval_difficulty" => diff(&self.eval_difficulty),
            "eval_seeds" => self.eval_seeds.to_string(),
            "greedy" => self.greedy.to_string(),
            "workers" => self.workers.to_string(),
            "horizon" => self.horizon.to_string(),
            "train_steps" => self.train_steps.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "lr" => self.lr.to_string(),
            "entropy_coef" => self.entropy_coef.to_string(),
            "ppo_epochs" => self.ppo_epochs.to_string(),
            "minibatches" => self.minibatches.to_string(),
            "chunk_len" => self.chunk_len.to_string(),
            "arm" => self.arm.name().to_string(),
            "noisy_actuation" => self.noisy_actuation.to_string(),
            "source" => opt_str(&self.source.as_ref().map(|p| p.display())),
            "goal_encoder" => opt_str(&self.goal_encoder.as_ref().map(|p| p.display())),
            "transfer" => self.transfer.to_string(),
            "freeze" => self.freeze.to_string(),
            "pairs" => self.pairs.to_string(),
            "probes" => self.probes.to_string(),
            "align_epochs" => self.align_epochs.to_string(),
            "align_batch" => self.align_batch.to_string(),
            "align_lr" => self.align_lr.to_string(),
            "reference_succ" => opt_str(&self.reference_succ),
            "plan_style" => self.plan_style.name().to_string(),
            _ => return None,
        })
    }

    /// Parse `key = value` lines; `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Apply `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse { line: i + 1, msg: format!("expected `key = value`, got `{line}`") })?;
            self.set(k.trim(), v.trim()).map_err(|msg| Error::Parse { line: i + 1, msg })?;
        }
        Ok(())
    }

    /// Every key with its value, one `key = value` line each.
    pub fn echo(&self) -> String {
        Self::KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k).expect("known key"))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.task.modalities().contains(&self.modality) {
            return Err(Error::ModalityMismatch { expected: format!("one of {:?} for {}", self.task.modalities(), self.task), found: self.modality.to_string() });
        }
        let positive = [
            ("train_plans", self.train_plans),
            ("eval_plans", self.eval_plans),
            ("resolution", self.resolution),
            ("eval_seeds", self.eval_seeds),
            ("workers", self.workers),
            ("horizon", self.horizon),
            ("align_batch", self.align_batch),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{k}` must be positive")));
        }
        if self.resolution < 16 {
            return Err(Error::Config(format!("resolution must be at least 16, got {}", self.resolution)));
        }
        if let Some(r) = self.reference_succ {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("reference_succ must lie in [0, 1], got {r}")));
            }
        }
        Ok(())
    }
}
