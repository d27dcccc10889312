//! Difficulty-tiered navigation episodes and offline pair datasets.

mod pairs;

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::{derive_audio, derive_edgemap, derive_sketch, render_observation, GoalDescriptor, Modality, Observation, RenderConfig, AUDIO_NOISE_SCALE};
use crate::worldgen::{DistanceField, FloorPlan, GridPos, ObjectCategory, Pose, RoomCategory};

pub use pairs::{
    build_pair_dataset, build_retrieval_probes, category_name, train_test_instance_split, visible_instances, InstanceSplit, LabelVocab, PairDataset,
    PairEntry, PairSpec, RetrievalProbe, PROBE_CANDIDATES, VISIBILITY_MIN_COLUMNS, VISIBILITY_RANGE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    ImageNav,
    ObjectNav,
    RoomNav,
    ViewNav,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::ImageNav, Task::ObjectNav, Task::RoomNav, Task::ViewNav];

    pub fn name(self) -> &'static str {
        match self {
            Task::ImageNav => "imagenav",
            Task::ObjectNav => "objectnav",
            Task::RoomNav => "roomnav",
            Task::ViewNav => "viewnav",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }

    /// Modalities a task can be posed with.
    pub fn modalities(self) -> &'static [Modality] {
        match self {
            Task::ImageNav => &[Modality::Image],
            Task::ObjectNav => &[Modality::Label, Modality::Sketch, Modality::Audio],
            Task::RoomNav => &[Modality::Label],
            Task::ViewNav => &[Modality::Edgemap],
        }
    }

    pub fn default_modality(self) -> Modality {
        self.modalities()[0]
    }

    /// Whether the task defines a goal view heading for angle shaping.
    pub fn has_goal_view(self) -> bool {
        matches!(self, Task::ImageNav | Task::ViewNav)
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    /// Half-open geodesic band in meters.
    pub fn band(self) -> (f64, f64) {
        match self {
            Difficulty::Easy => (1.5, 3.0),
            Difficulty::Medium => (3.0, 5.0),
            Difficulty::Hard => (5.0, 10.0),
        }
    }

    pub fn contains(self, d: f64) -> bool {
        let (lo, hi) = self.band();
        d >= lo && d < hi
    }

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub min_ratio: f64,
    pub success_radius: f64,
    pub max_steps_imagenav: u32,
    pub max_steps_objectnav: u32,
    pub max_steps_roomnav: u32,
    pub max_steps_viewnav: u32,
    /// Goal positions tried before giving up.
    pub goal_attempts: u32,
    pub render: RenderConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            min_ratio: 1.1,
            success_radius: 1.0,
            max_steps_imagenav: 250,
            max_steps_objectnav: 125,
            max_steps_roomnav: 125,
            max_steps_viewnav: 250,
            goal_attempts: 200,
            render: RenderConfig::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn max_steps(&self, task: Task) -> u32 {
        match task {
            Task::ImageNav => self.max_steps_imagenav,
            Task::ObjectNav => self.max_steps_objectnav,
            Task::RoomNav => self.max_steps_roomnav,
            Task::ViewNav => self.max_steps_viewnav,
        }
    }
}

/// What to sample: a task, the goal modality, an optional fixed target
/// category and, for sketch/audio goals, the instance seeds to draw from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GoalRequest {
    pub task: Option<Task>,
    pub modality: Option<Modality>,
    pub category: Option<usize>,
    /// Per-category seed pools (sketch variant seeds or audio noise seeds).
    pub instance_seeds: Option<Vec<Vec<u64>>>,
}

impl GoalRequest {
    pub fn task(task: Task) -> Self {
        Self { task: Some(task), ..Default::default() }
    }

    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = Some(modality);
        self
    }

    pub fn with_category(mut self, category: usize) -> Self {
        self.category = Some(category);
        self
    }

    pub fn with_seeds(mut self, seeds: Vec<Vec<u64>>) -> Self {
        self.instance_seeds = Some(seeds);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub id: u64,
    /// Generation seed of the plan the episode lives on.
    pub plan_id: u64,
    pub task: Task,
    pub difficulty: Difficulty,
    pub start: Pose,
    /// Goal position; its heading equals `goal_view_heading`.
    pub goal_pos: Pose,
    /// v_G. Only meaningful for tasks with a goal view.
    pub goal_view_heading: f64,
    /// Object category (ObjectNav) or room category (RoomNav).
    pub target_category: Option<usize>,
    pub goal: GoalDescriptor,
    /// Seed of the sketch variant or audio noise stream, when applicable.
    pub goal_seed: Option<u64>,
    /// Shortest-path length from start to the goal in meters.
    pub shortest_length: f64,
    pub max_steps: u32,
    pub success_radius: f64,
}

impl EpisodeSpec {
    pub fn modality(&self) -> Modality {
        self.goal.modality()
    }

    /// Source cells of the goal distance field: the goal cell, every cell of
    /// every instance of the target object category, or every cell of every
    /// room of the target room category.
    pub fn goal_cells(&self, plan: &FloorPlan) -> Result<Vec<GridPos>> {
        goal_cells(plan, self.task, self.target_category, &self.goal_pos)
    }
}

fn goal_cells(plan: &FloorPlan, task: Task, category: Option<usize>, goal_pos: &Pose) -> Result<Vec<GridPos>> {
    match task {
        Task::ImageNav | Task::ViewNav => Ok(vec![plan.pose_cell(goal_pos)?]),
        Task::ObjectNav => {
            let cat = category.and_then(ObjectCategory::from_index).ok_or_else(|| Error::Config("ObjectNav needs an object category".into()))?;
            let cells: Vec<GridPos> = plan.objects_of(cat).flat_map(|o| o.footprint.iter().copied()).collect();
            if cells.is_empty() {
                return Err(Error::NoGoalInstances { category: cat.to_string() });
            }
            Ok(cells)
        }
        Task::RoomNav => {
            let cat = category.and_then(RoomCategory::from_index).ok_or_else(|| Error::Config("RoomNav needs a room category".into()))?;
            let cells: Vec<GridPos> = plan.rooms_of(cat).flat_map(|r| r.cells.iter().copied()).collect();
            if cells.is_empty() {
                return Err(Error::NoGoalInstances { category: cat.to_string() });
            }
            Ok(cells)
        }
    }
}

fn random_heading<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.gen_range(0.0..std::f64::consts::TAU)
}

/// Pick a heading for the goal view and render the goal image there.
pub fn sample_goal_view<R: Rng + ?Sized>(plan: &FloorPlan, goal_pos: &Pose, cfg: &RenderConfig, rng: &mut R) -> Result<(f64, Observation)> {
    let heading = random_heading(rng);
    let pose = Pose::new(goal_pos.x, goal_pos.y, heading);
    Ok((pose.heading, render_observation(plan, &pose, cfg)?))
}

/// Sample an episode on `plan`.
pub fn sample_episode<R: Rng + ?Sized>(
    plan: &FloorPlan,
    request: &GoalRequest,
    difficulty: Difficulty,
    cfg: &EpisodeConfig,
    id: u64,
    rng: &mut R,
) -> Result<EpisodeSpec> {
    let task = request.task.unwrap_or(Task::ImageNav);
    let modality = request.modality.unwrap_or_else(|| task.default_modality());
    if !task.modalities().contains(&modality) {
        return Err(Error::ModalityMismatch { expected: format!("one of {:?} for {task}", task.modalities()), found: modality.to_string() });
    }
    let (lo, hi) = difficulty.band();
    let constraint = format!("{} band [{lo}, {hi}) m with geodesic/euclidean >= {}", difficulty.name(), cfg.min_ratio);
    let free: Vec<GridPos> = plan.free_cells().collect();
    let cs = plan.cell_size();

    match task {
        Task::ImageNav | Task::ViewNav => {
            for _ in 0..cfg.goal_attempts {
                let goal_cell = *free.choose(rng).expect("plans have free cells");
                let field = DistanceField::from_sources(plan, &[goal_cell])?;
                let goal_xy = Pose::at_cell(goal_cell, cs, 0.0);
                let starts: Vec<(GridPos, f64)> = free
                    .iter()
                    .filter_map(|&p| {
                        let d = field.meters(p)?;
                        let e = Pose::at_cell(p, cs, 0.0).euclidean(&goal_xy);
                        (difficulty.contains(d) && d >= cfg.min_ratio * e).then_some((p, d))
                    })
                    .collect();
                let Some(&(start_cell, d)) = starts.choose(rng) else { continue };
                let start = Pose::at_cell(start_cell, cs, random_heading(rng));
                let (heading, image) = sample_goal_view(plan, &goal_xy, &cfg.render, rng)?;
                let goal = if task == Task::ImageNav { GoalDescriptor::Image(image) } else { derive_edgemap(&image) };
                return Ok(EpisodeSpec {
                    id,
                    plan_id: plan.seed(),
                    task,
                    difficulty,
                    start,
                    goal_pos: Pose::new(goal_xy.x, goal_xy.y, heading),
                    goal_view_heading: heading,
                    target_category: None,
                    goal,
                    goal_seed: None,
                    shortest_length: d,
                    max_steps: cfg.max_steps(task),
                    success_radius: cfg.success_radius,
                });
            }
            Err(Error::EpisodeSampling { constraint, attempts: cfg.goal_attempts })
        }
        Task::ObjectNav | Task::RoomNav => {
            // Without an explicit category, present categories are tried in
            // random order so that one infeasible category does not fail the draw.
            let categories: Vec<usize> = match request.category {
                Some(c) => vec![c],
                None => {
                    let mut present: Vec<usize> = if task == Task::ObjectNav {
                        ObjectCategory::ALL.iter().filter(|c| plan.objects_of(**c).next().is_some()).map(|c| c.index()).collect()
                    } else {
                        RoomCategory::ALL.iter().filter(|c| plan.rooms_of(**c).next().is_some()).map(|c| c.index()).collect()
                    };
                    if present.is_empty() {
                        return Err(Error::NoGoalInstances { category: "any".into() });
                    }
                    present.shuffle(rng);
                    present
                }
            };
            for category in categories {
                let sources = goal_cells(plan, task, Some(category), &Pose::new(0.0, 0.0, 0.0))?;
                let field = DistanceField::from_sources(plan, &sources)?;
                let mut candidates: Vec<GridPos> =
                    free.iter().copied().filter(|&p| field.meters(p).is_some_and(|d| difficulty.contains(d))).collect();
                candidates.shuffle(rng);
                for &start_cell in candidates.iter().take(cfg.goal_attempts as usize) {
                    let d = field.meters(start_cell).expect("filtered");
                    let path = field.descend(plan, start_cell)?;
                    let nearest = *path.last().expect("non-empty path");
                    let goal_xy = Pose::at_cell(nearest, cs, 0.0);
                    let start = Pose::at_cell(start_cell, cs, random_heading(rng));
                    if d < cfg.min_ratio * start.euclidean(&goal_xy) {
                        continue;
                    }
                    let (goal, goal_seed) = make_category_goal(plan, task, modality, category, d, request, &cfg.render, rng)?;
                    return Ok(EpisodeSpec {
                        id,
                        plan_id: plan.seed(),
                        task,
                        difficulty,
                        start,
                        goal_pos: goal_xy,
                        goal_view_heading: 0.0,
                        target_category: Some(category),
                        goal,
                        goal_seed,
                        shortest_length: d,
                        max_steps: cfg.max_steps(task),
                        success_radius: cfg.success_radius,
                    });
                }
            }
            Err(Error::EpisodeSampling { constraint, attempts: cfg.goal_attempts })
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn make_category_goal<R: Rng + ?Sized>(
    plan: &FloorPlan,
    task: Task,
    modality: Modality,
    category: usize,
    distance: f64,
    request: &GoalRequest,
    render: &RenderConfig,
    rng: &mut R,
) -> Result<(GoalDescriptor, Option<u64>)> {
    let pick_seed = |rng: &mut R| -> u64 {
        match &request.instance_seeds {
            Some(pools) if pools.get(category).is_some_and(|p| !p.is_empty()) => *pools[category].choose(rng).expect("non-empty"),
            _ => rng.gen(),
        }
    };
    match modality {
        Modality::Label => Ok((GoalDescriptor::Label(category), None)),
        Modality::Audio if task == Task::ObjectNav => {
            let seed = pick_seed(rng);
            Ok((derive_audio(category, distance, seed, AUDIO_NOISE_SCALE)?, Some(seed)))
        }
        Modality::Sketch if task == Task::ObjectNav => {
            let cat = ObjectCategory::from_index(category).expect("validated");
            let instances: Vec<_> = plan.objects_of(cat).collect();
            // Try seeds until one yields a viewpoint.
            let mut last = None;
            for _ in 0..8 {
                let seed = pick_seed(rng);
                let obj = instances.choose(rng).expect("category present");
                match derive_sketch(plan, obj, seed, render) {
                    Ok(goal) => return Ok((goal, Some(seed))),
                    Err(e) => last = Some(e),
                }
            }
            Err(last.expect("at least one attempt"))
        }
        other => Err(Error::ModalityMismatch { expected: format!("a modality of {task}"), found: other.to_string() }),
    }
}

/// Write episodes as JSON lines, one `EpisodeSpec` per line.
pub fn save_episodes(path: &Path, episodes: &[EpisodeSpec]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ep in episodes {
        serde_json::to_writer(&mut f, ep)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn load_episodes(path: &Path) -> Result<Vec<EpisodeSpec>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?);
    }
    Ok(out)
}
