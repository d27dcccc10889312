//! Rollout collection across environment workers and advantage estimation.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::augment::{augment_goal, augment_image, AugmentConfig};
use super::env::{EnvConfig, EpisodeResult, NavEnv};
use crate::agents::{Action, Assembly, HiddenState};
use crate::episodes::{sample_goal_view, EpisodeSpec};
use crate::error::{Error, Result};
use crate::render::{derive_edgemap, GoalDescriptor, Modality, Observation, RenderConfig};
use crate::util::derive_seed;
use crate::worldgen::{FloorPlan, Pose};

/// Fixed set of training episodes drawn from uniformly on every reset.
#[derive(Debug, Clone)]
pub struct EpisodePool {
    plans: BTreeMap<u64, Arc<FloorPlan>>,
    episodes: Vec<EpisodeSpec>,
    /// Resample the goal-view heading (and goal image) on every draw.
    pub view_augmentation: bool,
    pub render: RenderConfig,
}

impl EpisodePool {
    pub fn new(plans: Vec<Arc<FloorPlan>>, episodes: Vec<EpisodeSpec>, render: RenderConfig) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::Empty("episode pool"));
        }
        let plans: BTreeMap<u64, Arc<FloorPlan>> = plans.into_iter().map(|p| (p.seed(), p)).collect();
        if let Some(e) = episodes.iter().find(|e| !plans.contains_key(&e.plan_id)) {
            return Err(Error::MissingArtifact(format!("plan {} for episode {}", e.plan_id, e.id)));
        }
        Ok(Self { plans, episodes, view_augmentation: false, render })
    }

    pub fn with_view_augmentation(mut self, on: bool) -> Self {
        self.view_augmentation = on;
        self
    }

    pub fn episodes(&self) -> &[EpisodeSpec] {
        &self.episodes
    }

    pub fn plan(&self, plan_id: u64) -> Option<&Arc<FloorPlan>> {
        self.plans.get(&plan_id)
    }

    /// Draw an episode. With view augmentation, tasks that carry a goal view
    /// get a freshly sampled heading and a goal rendered from it.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Arc<FloorPlan>, EpisodeSpec)> {
        let mut ep = self.episodes[rng.gen_range(0..self.episodes.len())].clone();
        let plan = Arc::clone(&self.plans[&ep.plan_id]);
        if self.view_augmentation && ep.task.has_goal_view() {
            let (heading, view) = sample_goal_view(&plan, &ep.goal_pos, &self.render, rng)?;
            let goal = match ep.modality() {
                Modality::Image => Some(GoalDescriptor::Image(view)),
                Modality::Edgemap => Some(derive_edgemap(&view)),
                _ => None,
            };
            if let Some(goal) = goal {
                ep.goal = goal;
                ep.goal_view_heading = heading;
                ep.goal_pos = Pose::new(ep.goal_pos.x, ep.goal_pos.y, heading);
            }
        }
        Ok((plan, ep))
    }
}

/// One environment worker with its own random stream and recurrent state.
pub struct Worker {
    pub id: usize,
    rng: ChaCha8Rng,
    env: Option<NavEnv>,
    hidden: HiddenState,
    goal: Option<GoalDescriptor>,
    goal_id: usize,
    episode_return: f64,
    fresh: bool,
}

impl Worker {
    pub fn new(id: usize, seed: u64) -> Self {
        Self {
            id,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, id as u64)),
            env: None,
            hidden: HiddenState::zeros(),
            goal: None,
            goal_id: 0,
            episode_return: 0.0,
            fresh: true,
        }
    }

    /// Workers `0..n`, each seeded from `seed` and its id.
    pub fn spawn(n: usize, seed: u64) -> Vec<Self> {
        (0..n).map(|i| Self::new(i, seed)).collect()
    }

    fn wrap(&self, e: Error) -> Error {
        Error::Worker { worker: self.id, source: Box::new(e) }
    }

    fn needs_reset(&self) -> bool {
        self.env.as_ref().map_or(true, NavEnv::is_done)
    }

    fn reset(&mut self, pool: &EpisodePool, cfg: &RolloutConfig) -> Result<()> {
        let (plan, ep) = pool.draw(&mut self.rng)?;
        let noise_seed = self.rng.gen();
        let env = NavEnv::new(plan, ep, &cfg.env, noise_seed)?;
        self.goal = Some(augment_goal(env.goal(), &cfg.augment, &mut self.rng));
        self.env = Some(env);
        self.hidden = HiddenState::zeros();
        self.episode_return = 0.0;
        self.fresh = true;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutConfig {
    /// Steps per worker per collection.
    pub horizon: usize,
    pub env: EnvConfig,
    pub augment: AugmentConfig,
    /// Greedy instead of sampled actions.
    pub greedy: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self { horizon: 128, env: EnvConfig::default(), augment: AugmentConfig::default(), greedy: false }
    }
}

/// Transitions of `workers` parallel sequences of `horizon` steps, stored
/// worker-major: entry `w * horizon + t`.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub workers: usize,
    pub horizon: usize,
    /// Policy input images (after augmentation).
    pub observations: Vec<Observation>,
    /// Goal table; `goal_ids` index into it.
    pub goals: Vec<GoalDescriptor>,
    pub goal_ids: Vec<usize>,
    pub actions: Vec<Action>,
    pub log_probs: Vec<f32>,
    pub values: Vec<f32>,
    pub rewards: Vec<f64>,
    /// The step ended its episode (stop issued or budget exhausted).
    pub dones: Vec<bool>,
    /// 0 on the first step of an episode, 1 otherwise; multiplies the
    /// carried recurrent state.
    pub masks: Vec<f32>,
    /// Recurrent state fed into each step.
    pub hidden: Vec<HiddenState>,
    pub poses: Vec<Pose>,
    pub next_poses: Vec<Pose>,
    /// Episode table; `episode_ids` index into it.
    pub episodes: Vec<EpisodeSpec>,
    pub episode_ids: Vec<usize>,
    /// Value estimate of the state after the last step of each worker.
    pub bootstrap: Vec<f32>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Episodes that finished during the collection, with their returns.
    pub completed: Vec<(EpisodeResult, f64)>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn index(&self, worker: usize, t: usize) -> usize {
        worker * self.horizon + t
    }

    /// Fill `advantages` and `returns` with per-worker GAE.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) {
        self.advantages = vec![0.0; self.len()];
        self.returns = vec![0.0; self.len()];
        for w in 0..self.workers {
            let r = w * self.horizon..(w + 1) * self.horizon;
            let values: Vec<f64> = self.values[r.clone()].iter().map(|&v| v as f64).collect();
            let (adv, ret) = compute_gae(&self.rewards[r.clone()], &values, &self.dones[r.clone()], self.bootstrap[w] as f64, gamma, lambda);
            self.advantages[r.clone()].copy_from_slice(&adv);
            self.returns[r].copy_from_slice(&ret);
        }
    }
}

/// Generalized advantage estimation over one sequence. A done at step `t`
/// cuts both the bootstrap and the advantage carry after `t`; `bootstrap`
/// is the value of the state following the last step.
pub fn compute_gae(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut carry = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        carry = delta + gamma * lambda * live * carry;
        adv[t] = carry;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Shift to mean 0 and scale to standard deviation 1 (population, `eps` guarded).
pub fn normalize_advantages(adv: &[f64], eps: f64) -> Vec<f64> {
    if adv.is_empty() {
        return Vec::new();
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    adv.iter().map(|a| (a - mean) / (std + eps)).collect()
}

/// Step every worker `cfg.horizon` times with the current policy.
/// Episodes that end are replaced by fresh draws from `pool`.
pub fn collect_rollouts(assembly: &Assembly, workers: &mut [Worker], pool: &EpisodePool, cfg: &RolloutConfig) -> Result<RolloutBuffer> {
    if workers.is_empty() {
        return Err(Error::Empty("worker list"));
    }
    if cfg.horizon == 0 {
        return Err(Error::Config("rollout horizon must be >= 1".into()));
    }
    let (nw, horizon) = (workers.len(), cfg.horizon);
    let mut buf = RolloutBuffer { workers: nw, horizon, ..Default::default() };
    let mut fields: Vec<Vec<Option<StepRecord>>> = (0..nw).map(|_| (0..horizon).map(|_| None).collect()).collect();
    let mut embeddings: Vec<Vec<f32>> = Vec::new();
    let mut episode_slot: Vec<usize> = vec![0; nw];
    // Episodes continuing from the previous collection get fresh table entries.
    for (wi, w) in workers.iter_mut().enumerate() {
        if let (Some(env), Some(goal)) = (&w.env, &w.goal) {
            if !env.is_done() {
                buf.episodes.push(env.episode().clone());
                episode_slot[wi] = buf.episodes.len() - 1;
                buf.goals.push(match env.goal() {
                    GoalDescriptor::Audio(_) => env.goal().clone(),
                    _ => goal.clone(),
                });
                w.goal_id = buf.goals.len() - 1;
            }
        }
    }
    for t in 0..horizon {
        let mut obs = Vec::with_capacity(nw);
        let mut gids = Vec::with_capacity(nw);
        for (wi, w) in workers.iter_mut().enumerate() {
            if w.needs_reset() {
                w.reset(pool, cfg).map_err(|e| w.wrap(e))?;
                buf.episodes.push(w.env.as_ref().expect("reset").episode().clone());
                episode_slot[wi] = buf.episodes.len() - 1;
                buf.goals.push(w.goal.clone().expect("reset sets goal"));
                w.goal_id = buf.goals.len() - 1;
            }
            let env = w.env.as_ref().expect("env present");
            let o = env.observe().map_err(|e| w.wrap(e))?;
            obs.push(augment_image(&o, &cfg.augment, &mut w.rng));
            if let GoalDescriptor::Audio(_) = env.goal() {
                if !w.fresh {
                    buf.goals.push(env.goal().clone());
                    w.goal_id = buf.goals.len() - 1;
                }
            }
            gids.push(w.goal_id);
        }
        if embeddings.len() < buf.goals.len() {
            let new: Vec<&GoalDescriptor> = buf.goals[embeddings.len()..].iter().collect();
            embeddings.extend(assembly.embed_goals(&new)?);
        }
        let obs_refs: Vec<&Observation> = obs.iter().collect();
        let emb_refs: Vec<&[f32]> = gids.iter().map(|&g| embeddings[g].as_slice()).collect();
        let hid_refs: Vec<&HiddenState> = workers.iter().map(|w| &w.hidden).collect();
        let outs = assembly.act_embedded_batch(&obs_refs, &emb_refs, &hid_refs)?;
        for ((wi, w), (out, o)) in workers.iter_mut().enumerate().zip(outs.into_iter().zip(obs)) {
            let action = out.select(cfg.greedy, &mut w.rng);
            let env = w.env.as_mut().expect("env present");
            let pose = env.pose();
            let tr = env.step(action).map_err(|e| Error::Worker { worker: wi, source: Box::new(e) })?;
            w.episode_return += tr.reward;
            let mask = if w.fresh { 0.0 } else { 1.0 };
            fields[wi][t] = Some(StepRecord {
                obs: o,
                goal_id: gids[wi],
                action,
                log_prob: out.log_prob(action) as f32,
                value: out.value,
                reward: tr.reward,
                done: tr.done,
                mask,
                hidden: std::mem::replace(&mut w.hidden, out.hidden),
                pose,
                next_pose: tr.pose,
                episode: episode_slot[wi],
            });
            w.fresh = false;
            if tr.done {
                buf.completed.push((env.result(), w.episode_return));
            }
        }
    }
    for row in fields {
        for rec in row {
            let r = rec.expect("every slot filled");
            buf.observations.push(r.obs);
            buf.goal_ids.push(r.goal_id);
            buf.actions.push(r.action);
            buf.log_probs.push(r.log_prob);
            buf.values.push(r.value);
            buf.rewards.push(r.reward);
            buf.dones.push(r.done);
            buf.masks.push(r.mask);
            buf.hidden.push(r.hidden);
            buf.poses.push(r.pose);
            buf.next_poses.push(r.next_pose);
            buf.episode_ids.push(r.episode);
        }
    }
    buf.bootstrap = bootstrap_values(assembly, workers, &embeddings, cfg)?;
    Ok(buf)
}

struct StepRecord {
    obs: Observation,
    goal_id: usize,
    action: Action,
    log_prob: f32,
    value: f32,
    reward: f64,
    done: bool,
    mask: f32,
    hidden: HiddenState,
    pose: Pose,
    next_pose: Pose,
    episode: usize,
}

/// Value of each worker's current state; 0 for workers whose episode just ended.
fn bootstrap_values(assembly: &Assembly, workers: &mut [Worker], embeddings: &[Vec<f32>], cfg: &RolloutConfig) -> Result<Vec<f32>> {
    let live: Vec<usize> = (0..workers.len()).filter(|&i| !workers[i].needs_reset()).collect();
    let mut out = vec![0f32; workers.len()];
    if live.is_empty() {
        return Ok(out);
    }
    let mut obs = Vec::new();
    let mut goal_emb: Vec<Vec<f32>> = Vec::new();
    for &i in &live {
        let w = &mut workers[i];
        let env = w.env.as_ref().expect("live worker has env");
        let o = env.observe().map_err(|e| Error::Worker { worker: i, source: Box::new(e) })?;
        obs.push(augment_image(&o, &cfg.augment, &mut w.rng));
        goal_emb.push(match env.goal() {
            GoalDescriptor::Audio(_) => assembly.embed_goals(&[env.goal()])?.remove(0),
            _ => embeddings[w.goal_id].clone(),
        });
    }
    let obs_refs: Vec<&Observation> = obs.iter().collect();
    let emb_refs: Vec<&[f32]> = goal_emb.iter().map(Vec::as_slice).collect();
    let hid_refs: Vec<&HiddenState> = live.iter().map(|&i| &workers[i].hidden).collect();
    for (&i, o) in live.iter().zip(assembly.act_embedded_batch(&obs_refs, &emb_refs, &hid_refs)?) {
        out[i] = o.value;
    }
    Ok(out)
}
