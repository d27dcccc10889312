//! Alignment of modality goal encoders `f_G^M` to a frozen image-goal
//! encoder `f_G^I` with the cosine embedding loss.
//!
//! Training precomputes the anchor embeddings of every dataset image once;
//! only the goal side is differentiated. The anchor checksum is verified
//! after every epoch.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use zsel_nn::{adam_step, AdamConfig, Graph, ParameterSet, Tensor, Var};

use crate::agents::{goal_input, goal_prefix, images_to_tensor, GoalEncoder, EMBED_DIM};
use crate::episodes::{PairDataset, RetrievalProbe};
use crate::error::{Error, Result};
use crate::render::{GoalDescriptor, Modality, Observation};
use crate::rltrain::{augment_goal, AugmentConfig};
use crate::util::derive_seed;

/// Lower bound applied to embedding norms before dividing.
pub const NORM_EPS: f64 = 1e-8;

/// Cosine embedding loss of one pair together with the number of norms that
/// had to be raised to [`NORM_EPS`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLoss {
    pub loss: f64,
    pub guarded: usize,
}

/// Cosine similarity with eps-guarded norms; also returns the guard count.
pub fn guarded_cosine(a: &[f32], b: &[f32]) -> Result<(f64, usize)> {
    if a.len() != b.len() {
        return Err(Error::Config(format!("embedding dims differ: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Empty("embedding"));
    }
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    let mut guarded = 0;
    let mut norm = |v: &[f32]| {
        let n = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if n < NORM_EPS {
            guarded += 1;
            NORM_EPS
        } else {
            n
        }
    };
    let (na, nb) = (norm(a), norm(b));
    Ok((dot / (na * nb), guarded))
}

/// `1 - cos` for matching pairs (`y = +1`), `max(0, cos)` otherwise.
pub fn embedding_loss_guarded(e_img: &[f32], e_goal: &[f32], y: i8) -> Result<PairLoss> {
    let (cos, guarded) = guarded_cosine(e_img, e_goal)?;
    let loss = match y {
        1 => 1.0 - cos,
        -1 => cos.max(0.0),
        other => return Err(Error::Config(format!("pair label must be +1 or -1, got {other}"))),
    };
    Ok(PairLoss { loss, guarded })
}

/// Cosine embedding loss of one pair.
pub fn embedding_loss(e_img: &[f32], e_goal: &[f32], y: i8) -> Result<f64> {
    Ok(embedding_loss_guarded(e_img, e_goal, y)?.loss)
}

/// Mean cosine embedding loss over the rows of `e_img` and `e_goal`
/// (`[N, D]` each) as a graph node.
pub fn alignment_loss(g: &mut Graph<f32>, e_img: Var, e_goal: Var, y: &[i8]) -> Result<Var> {
    let n = y.len();
    let cos = g.cosine_similarity(e_img, e_goal)?;
    if g.shape(cos) != [n] {
        return Err(Error::Config(format!("{n} labels for a batch of shape {:?}", g.shape(cos))));
    }
    let pos: Vec<f32> = y.iter().map(|&v| if v > 0 { 1.0 } else { 0.0 }).collect();
    let neg: Vec<f32> = pos.iter().map(|p| 1.0 - p).collect();
    let pos = g.constant(Tensor::new(&[n], pos)?);
    let neg = g.constant(Tensor::new(&[n], neg)?);
    // Positives: 1 - cos. Negatives: relu(cos).
    let one_minus = g.scale(cos, -1.0);
    let one_minus = g.add_scalar(one_minus, 1.0);
    let hinge = g.relu(cos);
    let lp = g.mul(pos, one_minus)?;
    let ln = g.mul(neg, hinge)?;
    let total = g.add(lp, ln)?;
    Ok(g.mean(total))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
    /// Fraction of pairs held out for early stopping.
    pub holdout_fraction: f64,
    /// Start image-like goal encoders from a copy of the anchor weights
    /// instead of a fresh initialization.
    pub init_from_anchor: bool,
    /// Random crop and brightness applied to image-like training goals.
    pub augment: AugmentConfig,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self { seed: 0, batch_size: 64, lr: 1e-3, max_epochs: 50, patience: 5, holdout_fraction: 0.1, init_from_anchor: false, augment: AugmentConfig::disabled() }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config(format!("holdout_fraction must lie in [0, 1), got {}", self.holdout_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout_loss: Option<f64>,
    pub retrieval_accuracy: Option<f64>,
}

/// JSON report of one alignment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub modality: Modality,
    pub config: AlignmentConfig,
    pub train_pairs: usize,
    pub heldout_pairs: usize,
    /// Anchor checksum, identical before and after the run.
    pub anchor_checksum: u64,
    /// Retrieval accuracy of the encoder before training.
    pub initial_retrieval_accuracy: Option<f64>,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose weights are returned (0 = initialization).
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Norms raised to the eps guard over the whole run.
    pub eps_guards: usize,
}

impl AlignmentReport {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Trained goal encoder (parameters under the modality's goal prefix only)
/// and its report.
#[derive(Debug, Clone)]
pub struct AlignmentOutcome {
    pub encoder: ParameterSet<f32>,
    pub report: AlignmentReport,
}

/// Fresh goal encoder parameters for `modality`, identical to the ones a
/// fresh assembly would draw from `seed`.
pub fn init_goal_encoder(modality: Modality, seed: u64) -> Result<ParameterSet<f32>> {
    let mut ps = ParameterSet::new();
    let prefix = goal_prefix(modality);
    crate::agents::init_module(&mut ps, seed, &prefix, |ps, rng| GoalEncoder::new(modality).init(ps, rng))?;
    Ok(ps)
}

/// Copy the anchor's image-goal encoder under the prefix of `modality`.
fn copy_anchor(anchor: &ParameterSet<f32>, modality: Modality) -> Result<ParameterSet<f32>> {
    let (from, to) = (goal_prefix(Modality::Image), goal_prefix(modality));
    let mut ps = ParameterSet::new();
    for (name, p) in anchor.iter().filter(|(n, _)| n.starts_with(&from)) {
        ps.insert(&format!("{to}{}", &name[from.len()..]), p.value().clone())?;
    }
    Ok(ps)
}

const EMBED_CHUNK: usize = 128;

/// Anchor embeddings `f_G^I(x)` of `images`, one row each.
pub fn embed_images(anchor: &ParameterSet<f32>, images: &[&Observation]) -> Result<Vec<Vec<f32>>> {
    let enc = GoalEncoder::new(Modality::Image);
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EMBED_CHUNK) {
        let mut g = Graph::inference();
        let x = g.constant(images_to_tensor(chunk)?);
        let e = enc.forward(&mut g, anchor, x)?;
        out.extend(g.value(e).data().chunks(EMBED_DIM).map(<[f32]>::to_vec));
    }
    Ok(out)
}

/// Goal embeddings `f_G^M(g)` of `goals`, one row each.
pub fn embed_goals(encoder: &ParameterSet<f32>, modality: Modality, goals: &[&GoalDescriptor]) -> Result<Vec<Vec<f32>>> {
    let enc = GoalEncoder::new(modality);
    let mut out = Vec::with_capacity(goals.len());
    for chunk in goals.chunks(EMBED_CHUNK) {
        let mut g = Graph::inference();
        let x = g.constant(goal_input(modality, chunk)?);
        let e = enc.forward(&mut g, encoder, x)?;
        out.extend(g.value(e).data().chunks(EMBED_DIM).map(<[f32]>::to_vec));
    }
    Ok(out)
}

/// Top-1 retrieval accuracy: for each probe, the candidate image whose
/// anchor embedding has the highest cosine to the goal embedding must be
/// the correct one. Ties resolve to the lowest candidate index.
pub fn retrieval_eval(encoder: &ParameterSet<f32>, modality: Modality, anchor: &ParameterSet<f32>, probes: &[RetrievalProbe]) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::Empty("probe set"));
    }
    let goals: Vec<&GoalDescriptor> = probes.iter().map(|p| &p.goal).collect();
    let ge = embed_goals(encoder, modality, &goals)?;
    let images: Vec<&Observation> = probes.iter().flat_map(|p| p.candidates.iter()).collect();
    let ie = embed_images(anchor, &images)?;
    let mut correct = 0usize;
    let mut offset = 0;
    for (p, e) in probes.iter().zip(&ge) {
        let mut best = (0, f64::NEG_INFINITY);
        for k in 0..p.candidates.len() {
            let (c, _) = guarded_cosine(e, &ie[offset + k])?;
            if c > best.1 {
                best = (k, c);
            }
        }
        offset += p.candidates.len();
        if best.0 == p.correct {
            correct += 1;
        }
    }
    Ok(correct as f64 / probes.len() as f64)
}

/// Mean loss over a set of pairs with precomputed anchor embeddings.
fn dataset_loss(encoder: &ParameterSet<f32>, modality: Modality, goals: &[&GoalDescriptor], anchors: &[&[f32]], y: &[i8]) -> Result<(f64, usize)> {
    let ge = embed_goals(encoder, modality, goals)?;
    let mut sum = 0.0;
    let mut guards = 0;
    for ((e, a), &y) in ge.iter().zip(anchors).zip(y) {
        let l = embedding_loss_guarded(a, e, y)?;
        sum += l.loss;
        guards += l.guarded;
    }
    Ok((sum / y.len() as f64, guards))
}

fn check_anchor(anchor: &ParameterSet<f32>, before: u64) -> Result<()> {
    let after = anchor.checksum(&goal_prefix(Modality::Image));
    if after != before {
        return Err(Error::FreezeViolation { before, after });
    }
    Ok(())
}

/// Train `f_G^M` for the dataset's modality so that its embeddings match
/// the anchor's image embeddings on positive pairs and are non-positive on
/// negative pairs. Minibatches are shuffled per epoch from `cfg.seed`;
/// weights from the epoch with the lowest held-out loss are returned.
pub fn train_goal_encoder(
    anchor: &ParameterSet<f32>,
    dataset: &PairDataset,
    probes: Option<&[RetrievalProbe]>,
    cfg: &AlignmentConfig,
) -> Result<AlignmentOutcome> {
    cfg.validate()?;
    let modality = dataset.modality;
    if modality == Modality::Image {
        return Err(Error::ModalityMismatch { expected: "a non-image goal modality".into(), found: modality.to_string() });
    }
    if dataset.entries.is_empty() {
        return Err(Error::Empty("pair dataset"));
    }
    let anchor_prefix = goal_prefix(Modality::Image);
    if anchor.count(&anchor_prefix) == 0 {
        return Err(Error::MissingArtifact(format!("anchor has no `{anchor_prefix}` blocks")));
    }
    let checksum = anchor.checksum(&anchor_prefix);

    let mut encoder = if cfg.init_from_anchor && modality.is_image_like() {
        copy_anchor(anchor, modality)?
    } else {
        init_goal_encoder(modality, cfg.seed)?
    };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0xa11a));
    let mut order: Vec<usize> = (0..dataset.entries.len()).collect();
    order.shuffle(&mut rng);
    let n_hold = ((dataset.entries.len() as f64) * cfg.holdout_fraction).round() as usize;
    let (hold_idx, train_idx) = order.split_at(n_hold.min(dataset.entries.len().saturating_sub(1)));
    let mut train_idx = train_idx.to_vec();

    let images: Vec<&Observation> = dataset.entries.iter().map(|e| &e.image).collect();
    let anchor_emb = embed_images(anchor, &images)?;
    let hold_goals: Vec<&GoalDescriptor> = hold_idx.iter().map(|&i| &dataset.entries[i].goal).collect();
    let hold_anchor: Vec<&[f32]> = hold_idx.iter().map(|&i| anchor_emb[i].as_slice()).collect();
    let hold_y: Vec<i8> = hold_idx.iter().map(|&i| dataset.entries[i].y).collect();
    let heldout = |enc: &ParameterSet<f32>| -> Result<Option<f64>> {
        if hold_idx.is_empty() {
            return Ok(None);
        }
        Ok(Some(dataset_loss(enc, modality, &hold_goals, &hold_anchor, &hold_y)?.0))
    };
    let retrieval = |enc: &ParameterSet<f32>| -> Result<Option<f64>> {
        match probes {
            Some(p) if !p.is_empty() => Ok(Some(retrieval_eval(enc, modality, anchor, p)?)),
            _ => Ok(None),
        }
    };

    let initial_retrieval_accuracy = retrieval(&encoder)?;
    let goal_enc = GoalEncoder::new(modality);
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut best = (heldout(&encoder)?.unwrap_or(f64::INFINITY), 0usize, encoder.clone());
    let mut epochs = Vec::new();
    let mut stale = 0;
    let mut stopped_early = false;
    let mut eps_guards = 0;
    for epoch in 1..=cfg.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in train_idx.chunks(cfg.batch_size) {
            let goals: Vec<GoalDescriptor> = batch.iter().map(|&i| augment_goal(&dataset.entries[i].goal, &cfg.augment, &mut rng)).collect();
            let goals: Vec<&GoalDescriptor> = goals.iter().collect();
            let y: Vec<i8> = batch.iter().map(|&i| dataset.entries[i].y).collect();
            let a: Vec<f32> = batch.iter().flat_map(|&i| anchor_emb[i].iter().copied()).collect();
            let mut g = Graph::new();
            let x = g.constant(goal_input(modality, &goals)?);
            let eg = goal_enc.forward(&mut g, &encoder, x)?;
            let ea = g.constant(Tensor::new(&[batch.len(), EMBED_DIM], a)?);
            let loss = alignment_loss(&mut g, ea, eg, &y)?;
            let lv = f64::from(g.value(loss).data()[0]);
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!("alignment loss at epoch {epoch}")));
            }
            eps_guards += g.eps_guard_count();
            loss_sum += lv * batch.len() as f64;
            let grads = g.backward(loss)?;
            encoder.zero_grad();
            encoder.accumulate_grads(&g, &grads);
            adam_step(&mut encoder, &adam)?;
        }
        check_anchor(anchor, checksum)?;
        let held = heldout(&encoder)?;
        epochs.push(EpochLog {
            epoch,
            train_loss: loss_sum / train_idx.len() as f64,
            heldout_loss: held,
            retrieval_accuracy: retrieval(&encoder)?,
        });
        let score = held.unwrap_or(loss_sum / train_idx.len() as f64);
        if score < best.0 {
            best = (score, epoch, encoder.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    check_anchor(anchor, checksum)?;
    let (_, best_epoch, encoder) = best;
    let report = AlignmentReport {
        modality,
        config: *cfg,
        train_pairs: train_idx.len(),
        heldout_pairs: hold_idx.len(),
        anchor_checksum: checksum,
        initial_retrieval_accuracy,
        epochs,
        best_epoch,
        stopped_early,
        eps_guards,
    };
    Ok(AlignmentOutcome { encoder, report })
}
