//! Running agents over fixed episode sets.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{mean_std, success_and_spl, MeanStd, SuccSpl};
use crate::agents::{Action, Assembly, HiddenState};
use crate::episodes::{Difficulty, EpisodeSpec};
use crate::error::{Error, Result};
use crate::render::{GoalDescriptor, Modality, Observation};
use crate::rltrain::{EnvConfig, EpisodeResult, NavEnv, Teacher};
use crate::util::derive_seed;
use crate::worldgen::{FloorPlan, Pose};

/// An agent acting in several environments ("lanes") at once.
pub trait Agent {
    /// Start of a new episode in `lane`.
    fn reset(&mut self, lane: usize, env: &NavEnv) -> Result<()>;
    /// One action per listed lane. `rngs[i]` is the random stream of the
    /// episode running in `lanes[i]`.
    fn act(&mut self, lanes: &[usize], envs: &[&NavEnv], rngs: &mut [ChaCha8Rng]) -> Result<Vec<Action>>;
}

/// A learned policy with per-lane recurrent state.
pub struct PolicyAgent<'a> {
    assembly: &'a Assembly,
    greedy: bool,
    hidden: Vec<HiddenState>,
    goal_emb: Vec<Vec<f32>>,
}

impl<'a> PolicyAgent<'a> {
    pub fn new(assembly: &'a Assembly, greedy: bool) -> Self {
        Self { assembly, greedy, hidden: Vec::new(), goal_emb: Vec::new() }
    }

    fn ensure(&mut self, lane: usize) {
        if self.hidden.len() <= lane {
            self.hidden.resize(lane + 1, HiddenState::zeros());
            self.goal_emb.resize(lane + 1, Vec::new());
        }
    }
}

impl Agent for PolicyAgent<'_> {
    fn reset(&mut self, lane: usize, env: &NavEnv) -> Result<()> {
        let found = env.episode().modality();
        if found != self.assembly.modality() {
            return Err(Error::ModalityMismatch { expected: self.assembly.modality().to_string(), found: found.to_string() });
        }
        self.ensure(lane);
        self.hidden[lane] = HiddenState::zeros();
        self.goal_emb[lane] = self.assembly.embed_goals(&[env.goal()])?.remove(0);
        Ok(())
    }

    fn act(&mut self, lanes: &[usize], envs: &[&NavEnv], rngs: &mut [ChaCha8Rng]) -> Result<Vec<Action>> {
        if self.assembly.modality() == Modality::Audio {
            // Audio goals change with the distance to the source.
            let goals: Vec<&GoalDescriptor> = envs.iter().map(|e| e.goal()).collect();
            for (&lane, emb) in lanes.iter().zip(self.assembly.embed_goals(&goals)?) {
                self.goal_emb[lane] = emb;
            }
        }
        let obs: Vec<Observation> = envs.iter().map(|e| e.observe()).collect::<Result<_>>()?;
        let obs_refs: Vec<&Observation> = obs.iter().collect();
        let emb: Vec<&[f32]> = lanes.iter().map(|&l| self.goal_emb[l].as_slice()).collect();
        let hid: Vec<&HiddenState> = lanes.iter().map(|&l| &self.hidden[l]).collect();
        let outs = self.assembly.act_embedded_batch(&obs_refs, &emb, &hid)?;
        let mut actions = Vec::with_capacity(lanes.len());
        for ((out, &lane), rng) in outs.into_iter().zip(lanes).zip(rngs.iter_mut()) {
            actions.push(out.select(self.greedy, rng));
            self.hidden[lane] = out.hidden;
        }
        Ok(actions)
    }
}

/// The planning teacher used as an oracle agent.
#[derive(Default)]
pub struct TeacherAgent {
    teachers: Vec<Teacher>,
}

impl TeacherAgent {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Agent for TeacherAgent {
    fn reset(&mut self, lane: usize, _env: &NavEnv) -> Result<()> {
        if self.teachers.len() <= lane {
            self.teachers.resize_with(lane + 1, Teacher::new);
        }
        self.teachers[lane] = Teacher::new();
        Ok(())
    }

    fn act(&mut self, lanes: &[usize], envs: &[&NavEnv], _rngs: &mut [ChaCha8Rng]) -> Result<Vec<Action>> {
        lanes.iter().zip(envs).map(|(&l, env)| self.teachers[l].act_env(env)).collect()
    }
}

/// Uniformly random actions.
#[derive(Debug, Default, Clone, Copy)]
pub struct RandomAgent;

impl Agent for RandomAgent {
    fn reset(&mut self, _lane: usize, _env: &NavEnv) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, lanes: &[usize], _envs: &[&NavEnv], rngs: &mut [ChaCha8Rng]) -> Result<Vec<Action>> {
        Ok(rngs.iter_mut().take(lanes.len()).map(|r| Action::ALL[r.gen_range(0..Action::ALL.len())]).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// One full pass over the episode set per seed.
    pub seeds: Vec<u64>,
    /// Greedy (default) or sampled action selection.
    pub greedy: bool,
    pub env: EnvConfig,
    /// Episodes run side by side.
    pub lanes: usize,
    /// Keep agent trajectories in the episode logs.
    pub keep_trajectories: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2], greedy: true, env: EnvConfig::default(), lanes: 16, keep_trajectories: false }
    }
}

/// Raw outcome of one evaluated episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub seed: u64,
    pub plan_id: u64,
    #[serde(flatten)]
    pub result: EpisodeResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<Pose>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub overall: SuccSpl,
    /// Per-difficulty metrics for the tiers present in the episode set.
    pub tiers: BTreeMap<Difficulty, SuccSpl>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub succ: MeanStd,
    pub spl: MeanStd,
}

/// Metrics per seed, their mean and standard deviation, and the raw logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub greedy: bool,
    pub per_seed: Vec<SeedMetrics>,
    pub summary: Summary,
    pub tiers: BTreeMap<Difficulty, Summary>,
    pub episodes: Vec<EpisodeLog>,
}

fn summarize(per: &[SuccSpl]) -> Result<Summary> {
    let succ: Vec<f64> = per.iter().map(|m| m.succ).collect();
    let spl: Vec<f64> = per.iter().map(|m| m.spl).collect();
    Ok(Summary { succ: mean_std(&succ)?, spl: mean_std(&spl)? })
}

/// Aggregate raw logs into per-seed, per-tier and summary metrics.
pub fn aggregate(greedy: bool, seeds: &[u64], mut episodes: Vec<EpisodeLog>) -> Result<EvalReport> {
    episodes.sort_by_key(|e| (e.seed, e.result.episode_id));
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let results: Vec<EpisodeResult> = episodes.iter().filter(|e| e.seed == seed).map(|e| e.result.clone()).collect();
        let overall = success_and_spl(&results)?;
        let mut tiers = BTreeMap::new();
        for d in Difficulty::ALL {
            let r: Vec<EpisodeResult> = results.iter().filter(|r| r.difficulty == d).cloned().collect();
            if !r.is_empty() {
                tiers.insert(d, success_and_spl(&r)?);
            }
        }
        per_seed.push(SeedMetrics { seed, overall, tiers });
    }
    let summary = summarize(&per_seed.iter().map(|s| s.overall).collect::<Vec<_>>())?;
    let mut tiers = BTreeMap::new();
    for d in Difficulty::ALL {
        let per: Vec<SuccSpl> = per_seed.iter().filter_map(|s| s.tiers.get(&d).copied()).collect();
        if !per.is_empty() {
            tiers.insert(d, summarize(&per)?);
        }
    }
    Ok(EvalReport { greedy, per_seed, summary, tiers, episodes })
}

/// Run `agent` on every episode once per seed. Each episode draws its action
/// and actuation-noise streams from `(seed, episode id)`, so results do not
/// depend on the number of lanes or on scheduling.
pub fn evaluate(agent: &mut dyn Agent, plans: &[Arc<FloorPlan>], episodes: &[EpisodeSpec], opts: &EvalOptions) -> Result<EvalReport> {
    if episodes.is_empty() {
        return Err(Error::Empty("evaluation episodes"));
    }
    if opts.seeds.is_empty() {
        return Err(Error::Empty("evaluation seeds"));
    }
    let by_id: BTreeMap<u64, &Arc<FloorPlan>> = plans.iter().map(|p| (p.seed(), p)).collect();
    let mut ids = std::collections::BTreeSet::new();
    for e in episodes {
        if !ids.insert(e.id) {
            return Err(Error::Config(format!("duplicate episode id {}", e.id)));
        }
        if !by_id.contains_key(&e.plan_id) {
            return Err(Error::MissingArtifact(format!("plan {} for episode {}", e.plan_id, e.id)));
        }
    }
    let lanes = opts.lanes.max(1);
    let mut logs = Vec::with_capacity(episodes.len() * opts.seeds.len());
    for &seed in &opts.seeds {
        let mut queue = episodes.iter();
        let mut active: Vec<Option<(NavEnv, ChaCha8Rng)>> = (0..lanes).map(|_| None).collect();
        loop {
            for (lane, slot) in active.iter_mut().enumerate() {
                if slot.is_none() {
                    if let Some(ep) = queue.next() {
                        let stream = derive_seed(seed, ep.id);
                        let env = NavEnv::new(Arc::clone(by_id[&ep.plan_id]), ep.clone(), &opts.env, derive_seed(stream, 1))?;
                        agent.reset(lane, &env)?;
                        *slot = Some((env, ChaCha8Rng::seed_from_u64(derive_seed(stream, 2))));
                    }
                }
            }
            let running: Vec<usize> = (0..lanes).filter(|&l| active[l].is_some()).collect();
            if running.is_empty() {
                break;
            }
            let mut rngs: Vec<ChaCha8Rng> = running.iter().map(|&l| active[l].as_ref().expect("running").1.clone()).collect();
            let actions = {
                let envs: Vec<&NavEnv> = running.iter().map(|&l| &active[l].as_ref().expect("running").0).collect();
                agent.act(&running, &envs, &mut rngs)?
            };
            for ((&lane, action), rng) in running.iter().zip(actions).zip(rngs) {
                let (env, stream) = active[lane].as_mut().expect("running");
                *stream = rng;
                env.step(action)?;
                if env.is_done() {
                    let (env, _) = active[lane].take().expect("running");
                    logs.push(EpisodeLog {
                        seed,
                        plan_id: env.episode().plan_id,
                        result: env.result(),
                        trajectory: opts.keep_trajectories.then(|| env.trajectory().to_vec()),
                    });
                }
            }
        }
    }
    aggregate(opts.greedy, &opts.seeds, logs)
}
