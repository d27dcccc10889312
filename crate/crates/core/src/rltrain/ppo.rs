//! Clipped PPO update over recurrent sequence chunks.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use zsel_nn::{adam_step, AdamConfig, Graph, Tensor, Var};

use super::rollout::{normalize_advantages, RolloutBuffer};
use crate::agents::{goal_input, images_to_tensor, Assembly, GRU_LAYERS, HIDDEN_DIM};
use crate::error::{Error, Result};
use crate::render::{GoalDescriptor, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    /// Ratio clip epsilon.
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub epochs: usize,
    /// Discount of the return (distinct from the slack reward).
    pub gamma: f64,
    pub gae_lambda: f64,
    pub lr: f64,
    pub max_grad_norm: f64,
    /// Minibatches per epoch.
    pub num_minibatches: usize,
    /// Length of the recurrent chunks a worker sequence is cut into.
    pub chunk_len: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            epochs: 2,
            gamma: 0.99,
            gae_lambda: 0.95,
            lr: 2.5e-4,
            max_grad_norm: 0.5,
            num_minibatches: 2,
            chunk_len: 32,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::Config(format!("clip must be in (0, 1), got {}", self.clip)));
        }
        if self.epochs == 0 || self.num_minibatches == 0 || self.chunk_len == 0 {
            return Err(Error::Config("epochs, minibatches and chunk length must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::Config(format!("gamma {} and lambda {} must be in [0, 1]", self.gamma, self.gae_lambda)));
        }
        if !(self.lr > 0.0 && self.max_grad_norm > 0.0) {
            return Err(Error::Config("learning rate and gradient-norm limit must be > 0".into()));
        }
        Ok(())
    }
}

/// Scalar clipped surrogate `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn surrogate_objective(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Averages over all minibatches of an update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    /// Largest `|ratio - 1|` in the first minibatch of the first epoch.
    pub initial_ratio_deviation: f64,
    pub minibatches: usize,
}

/// Per-row inputs of the PPO loss.
pub struct LossInputs<'a> {
    pub actions: &'a [usize],
    pub old_log_probs: &'a [f32],
    pub advantages: &'a [f32],
    pub returns: &'a [f32],
}

/// Graph nodes of the PPO loss terms.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub policy: Var,
    pub value: Var,
    pub entropy: Var,
    pub ratio: Var,
}

/// Build the PPO loss from `logits: [N, A]` and `values: [N]`:
/// `-mean(min(r A, clip(r) A)) + c_v mean((v - R)^2) - c_e H`.
pub fn ppo_loss(g: &mut Graph<f32>, logits: Var, values: Var, inputs: &LossInputs, cfg: &PpoConfig) -> Result<LossTerms> {
    let n = inputs.actions.len();
    let row = |g: &mut Graph<f32>, v: &[f32]| -> Result<Var> { Ok(g.constant(Tensor::new(&[n], v.to_vec())?)) };
    let old = row(g, inputs.old_log_probs)?;
    let adv = row(g, inputs.advantages)?;
    let ret = row(g, inputs.returns)?;
    let logp_all = g.log_softmax(logits)?;
    let logp = g.pick(logp_all, inputs.actions)?;
    let log_ratio = g.sub(logp, old)?;
    let ratio = g.exp(log_ratio);
    let s1 = g.mul(ratio, adv)?;
    let clipped = g.clamp(ratio, 1.0 - cfg.clip as f32, 1.0 + cfg.clip as f32);
    let s2 = g.mul(clipped, adv)?;
    let surr = g.minimum(s1, s2)?;
    let surr_mean = g.mean(surr);
    let policy = g.scale(surr_mean, -1.0);
    let diff = g.sub(values, ret)?;
    let sq = g.square(diff);
    let value = g.mean(sq);
    let p = g.exp(logp_all);
    let plogp = g.mul(p, logp_all)?;
    let neg_ent_rows = g.row_sum(plogp)?;
    let neg_ent = g.mean(neg_ent_rows);
    let entropy = g.scale(neg_ent, -1.0);
    let v_term = g.scale(value, cfg.value_coef as f32);
    let e_term = g.scale(entropy, -(cfg.entropy_coef as f32));
    let pv = g.add(policy, v_term)?;
    let total = g.add(pv, e_term)?;
    Ok(LossTerms { total, policy, value, entropy, ratio })
}

/// A contiguous run of steps of one worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Chunk {
    worker: usize,
    start: usize,
}

/// Forward the policy over a set of equal-length chunks, time-major.
/// Returns `(logits [B*L, A], values [B*L])` with row `tau * B + b`.
fn unroll(g: &mut Graph<f32>, assembly: &Assembly, buf: &RolloutBuffer, chunks: &[Chunk], len: usize) -> Result<(Var, Var)> {
    let b = chunks.len();
    let rows: Vec<usize> = (0..len).flat_map(|tau| chunks.iter().map(move |c| buf.index(c.worker, c.start + tau))).collect();
    let obs: Vec<&Observation> = rows.iter().map(|&i| &buf.observations[i]).collect();
    let x = g.constant(images_to_tensor(&obs)?);
    let eo_all = assembly.net.obs.forward(g, &assembly.params, x)?;
    let mut unique: BTreeMap<usize, usize> = BTreeMap::new();
    for &i in &rows {
        let next = unique.len();
        unique.entry(buf.goal_ids[i]).or_insert(next);
    }
    let mut order: Vec<(usize, usize)> = unique.iter().map(|(&gid, &slot)| (slot, gid)).collect();
    order.sort_unstable();
    let goals: Vec<&GoalDescriptor> = order.iter().map(|&(_, gid)| &buf.goals[gid]).collect();
    let gx = g.constant(goal_input(assembly.modality(), &goals)?);
    let eg_unique = assembly.net.goal.forward(g, &assembly.params, gx)?;
    let u = goals.len();
    let mut select = vec![0f32; rows.len() * u];
    for (r, &i) in rows.iter().enumerate() {
        select[r * u + unique[&buf.goal_ids[i]]] = 1.0;
    }
    let sel = g.constant(Tensor::new(&[rows.len(), u], select)?);
    let eg_all = g.matmul(sel, eg_unique)?;
    let mut hs: Vec<Var> = (0..GRU_LAYERS)
        .map(|l| {
            let data: Vec<f32> = chunks.iter().flat_map(|c| buf.hidden[buf.index(c.worker, c.start)].layer(l).iter().copied()).collect();
            Ok(g.constant(Tensor::new(&[b, HIDDEN_DIM], data)?))
        })
        .collect::<Result<_>>()?;
    let policy = assembly.net.policy.bind(g, &assembly.params)?;
    let mut logits = Vec::with_capacity(len);
    let mut values = Vec::with_capacity(len);
    for tau in 0..len {
        let eo = g.slice(eo_all, 0, tau * b, b)?;
        let eg = g.slice(eg_all, 0, tau * b, b)?;
        let m: Vec<f32> = chunks.iter().map(|c| buf.masks[buf.index(c.worker, c.start + tau)]).collect();
        let mask = g.constant(Tensor::new(&[b], m)?);
        let out = policy.step(g, eo, eg, &hs, Some(mask))?;
        hs = out.hidden;
        logits.push(out.logits);
        values.push(out.value);
    }
    Ok((g.concat(&logits, 0)?, g.concat(&values, 0)?))
}

/// Run `cfg.epochs` passes of minibatch PPO over `buf`, which must already
/// hold advantages and returns. Advantages are normalized over the whole
/// buffer. Frozen parameter blocks are not modified.
pub fn ppo_update<R: Rng + ?Sized>(assembly: &mut Assembly, buf: &RolloutBuffer, cfg: &PpoConfig, rng: &mut R) -> Result<UpdateStats> {
    cfg.validate()?;
    if buf.is_empty() || buf.advantages.len() != buf.len() || buf.returns.len() != buf.len() {
        return Err(Error::Config("rollout buffer has no advantages; compute them before updating".into()));
    }
    let len = cfg.chunk_len.min(buf.horizon);
    if buf.horizon % len != 0 {
        return Err(Error::Config(format!("chunk length {len} does not divide horizon {}", buf.horizon)));
    }
    let adv_norm: Vec<f32> = normalize_advantages(&buf.advantages, 1e-8).into_iter().map(|a| a as f32).collect();
    let mut chunks: Vec<Chunk> = (0..buf.workers).flat_map(|w| (0..buf.horizon / len).map(move |k| Chunk { worker: w, start: k * len })).collect();
    let groups = cfg.num_minibatches.min(chunks.len());
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut stats = UpdateStats::default();
    for epoch in 0..cfg.epochs {
        chunks.shuffle(rng);
        for k in 0..groups {
            let mb: Vec<Chunk> = chunks.iter().copied().skip(k).step_by(groups).collect();
            let rows: Vec<usize> = (0..len).flat_map(|tau| mb.iter().map(move |c| buf.index(c.worker, c.start + tau))).collect();
            let actions: Vec<usize> = rows.iter().map(|&i| buf.actions[i].index()).collect();
            let old: Vec<f32> = rows.iter().map(|&i| buf.log_probs[i]).collect();
            let adv: Vec<f32> = rows.iter().map(|&i| adv_norm[i]).collect();
            let ret: Vec<f32> = rows.iter().map(|&i| buf.returns[i] as f32).collect();
            let mut g = Graph::new();
            let (logits, values) = unroll(&mut g, assembly, buf, &mb, len)?;
            let inputs = LossInputs { actions: &actions, old_log_probs: &old, advantages: &adv, returns: &ret };
            let terms = ppo_loss(&mut g, logits, values, &inputs, cfg)?;
            let total = g.value(terms.total).item() as f64;
            let (pl, vl, ent) = (g.value(terms.policy).item() as f64, g.value(terms.value).item() as f64, g.value(terms.entropy).item() as f64);
            if !total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "PPO loss at epoch {epoch}, minibatch {k}, optimizer step {}: policy {pl}, value {vl}, entropy {ent}",
                    assembly.params.step()
                )));
            }
            let ratios = g.value(terms.ratio).data();
            let n = ratios.len() as f64;
            if epoch == 0 && k == 0 {
                stats.initial_ratio_deviation = ratios.iter().map(|r| (*r as f64 - 1.0).abs()).fold(0.0, f64::max);
            }
            let kl = ratios.iter().map(|&r| {
                let r = r as f64;
                (r - 1.0) - r.ln()
            });
            stats.approx_kl += kl.sum::<f64>() / n;
            stats.clip_fraction += ratios.iter().filter(|&&r| (r as f64 - 1.0).abs() > cfg.clip).count() as f64 / n;
            let grads = g.backward(terms.total)?;
            assembly.params.zero_grad();
            assembly.params.accumulate_grads(&g, &grads);
            stats.grad_norm += assembly.params.clip_grad_norm(cfg.max_grad_norm as f32) as f64;
            adam_step(&mut assembly.params, &adam)?;
            stats.policy_loss += pl;
            stats.value_loss += vl;
            stats.entropy += ent;
            stats.minibatches += 1;
        }
    }
    let m = stats.minibatches as f64;
    for v in [&mut stats.policy_loss, &mut stats.value_loss, &mut stats.entropy, &mut stats.approx_kl, &mut stats.clip_fraction, &mut stats.grad_norm] {
        *v /= m;
    }
    Ok(stats)
}
