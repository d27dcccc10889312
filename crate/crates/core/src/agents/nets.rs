//! Layer layout and forward passes of the agent modules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use zsel_nn::layers::{BoundConvNorm, BoundGru, BoundLinear, BoundResidual, ConvNorm, GruCell, Linear, ResidualBlock};
use zsel_nn::{Graph, ParameterSet, Real, Tensor, Var};

use super::{goal_prefix, EMBED_DIM, GRU_LAYERS, HIDDEN_DIM, LABEL_VOCAB, NUM_ACTIONS, OBS_PREFIX, POLICY_PREFIX};
use crate::error::{Error, Result};
use crate::render::{GoalDescriptor, Modality, Observation, AUDIO_DIM};
use crate::util::derive_seed;

/// Residual convolutional encoder: four stride-2 stages (16, 32, 64, 128
/// channels) with residual blocks after the second and fourth, global
/// average pooling and a linear head to [`EMBED_DIM`].
#[derive(Debug, Clone)]
pub struct ConvEncoder {
    pub prefix: String,
    c1: ConvNorm,
    c2: ConvNorm,
    r2: ResidualBlock,
    c3: ConvNorm,
    c4: ConvNorm,
    r4: ResidualBlock,
    head: Linear,
}

struct BoundConv {
    c1: BoundConvNorm,
    c2: BoundConvNorm,
    r2: BoundResidual,
    c3: BoundConvNorm,
    c4: BoundConvNorm,
    r4: BoundResidual,
    head: BoundLinear,
}

impl ConvEncoder {
    pub fn new(prefix: &str) -> Self {
        let p = |s: &str| format!("{prefix}{s}");
        Self {
            prefix: prefix.to_string(),
            c1: ConvNorm::new(&p("c1"), 3, 16, 2),
            c2: ConvNorm::new(&p("c2"), 16, 32, 2),
            r2: ResidualBlock::new(&p("r2"), 32),
            c3: ConvNorm::new(&p("c3"), 32, 64, 2),
            c4: ConvNorm::new(&p("c4"), 64, 128, 2),
            r4: ResidualBlock::new(&p("r4"), 128),
            head: Linear::new(&p("head"), 128, EMBED_DIM),
        }
    }

    pub fn init<T: Real>(&self, ps: &mut ParameterSet<T>, rng: &mut ChaCha8Rng) -> Result<()> {
        self.c1.init(ps, rng)?;
        self.c2.init(ps, rng)?;
        self.r2.init(ps, rng)?;
        self.c3.init(ps, rng)?;
        self.c4.init(ps, rng)?;
        self.r4.init(ps, rng)?;
        self.head.init(ps, rng)?;
        Ok(())
    }

    fn bind<T: Real>(&self, g: &mut Graph<T>, ps: &ParameterSet<T>) -> Result<BoundConv> {
        Ok(BoundConv {
            c1: self.c1.bind(g, ps)?,
            c2: self.c2.bind(g, ps)?,
            r2: self.r2.bind(g, ps)?,
            c3: self.c3.bind(g, ps)?,
            c4: self.c4.bind(g, ps)?,
            r4: self.r4.bind(g, ps)?,
            head: self.head.bind(g, ps)?,
        })
    }

    /// `x: [N, 3, H, W]` with `H, W >= 16` -> `[N, EMBED_DIM]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, ps: &ParameterSet<T>, x: Var) -> Result<Var> {
        let b = self.bind(g, ps)?;
        let mut y = b.c1.forward(g, x)?;
        y = g.relu(y);
        y = b.c2.forward(g, y)?;
        y = g.relu(y);
        y = b.r2.forward(g, y)?;
        y = b.c3.forward(g, y)?;
        y = g.relu(y);
        y = b.c4.forward(g, y)?;
        y = g.relu(y);
        y = b.r4.forward(g, y)?;
        let pooled = g.spatial_mean(y)?;
        Ok(b.head.forward(g, pooled)?)
    }
}

/// Goal encoder of one modality: a [`ConvEncoder`] for image-like goals, a
/// two-layer MLP for label and audio goals.
#[derive(Debug, Clone)]
pub enum GoalEncoder {
    Conv(ConvEncoder),
    Mlp { l1: Linear, l2: Linear },
}

impl GoalEncoder {
    pub fn new(modality: Modality) -> Self {
        let prefix = goal_prefix(modality);
        let mlp = |input: usize| GoalEncoder::Mlp {
            l1: Linear::new(&format!("{prefix}l1"), input, EMBED_DIM),
            l2: Linear::new(&format!("{prefix}l2"), EMBED_DIM, EMBED_DIM),
        };
        match modality {
            Modality::Image | Modality::Sketch | Modality::Edgemap => GoalEncoder::Conv(ConvEncoder::new(&prefix)),
            Modality::Label => mlp(LABEL_VOCAB),
            Modality::Audio => mlp(AUDIO_DIM),
        }
    }

    pub fn init<T: Real>(&self, ps: &mut ParameterSet<T>, rng: &mut ChaCha8Rng) -> Result<()> {
        match self {
            GoalEncoder::Conv(c) => c.init(ps, rng),
            GoalEncoder::Mlp { l1, l2 } => {
                l1.init(ps, rng)?;
                l2.init(ps, rng)?;
                Ok(())
            }
        }
    }

    /// Goal input tensor (see [`goal_input`]) -> `[N, EMBED_DIM]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, ps: &ParameterSet<T>, x: Var) -> Result<Var> {
        match self {
            GoalEncoder::Conv(c) => c.forward(g, ps, x),
            GoalEncoder::Mlp { l1, l2 } => {
                let (b1, b2) = (l1.bind(g, ps)?, l2.bind(g, ps)?);
                let h = b1.forward(g, x)?;
                let h = g.relu(h);
                Ok(b2.forward(g, h)?)
            }
        }
    }
}

/// Two stacked GRU layers over `[f_O(o); f_G(g)]` with an actor head of
/// [`NUM_ACTIONS`] logits and a scalar critic head.
#[derive(Debug, Clone)]
pub struct PolicyCore {
    grus: Vec<GruCell>,
    actor: Linear,
    critic: Linear,
}

pub struct BoundPolicy {
    grus: Vec<BoundGru>,
    actor: BoundLinear,
    critic: BoundLinear,
}

/// Graph handles produced by one policy step.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    /// `[N, NUM_ACTIONS]`.
    pub logits: Var,
    /// `[N]`.
    pub value: Var,
    /// One `[N, HIDDEN_DIM]` node per recurrent layer.
    pub hidden: Vec<Var>,
}

impl Default for PolicyCore {
    fn default() -> Self {
        Self::new()
    }
}

impl PolicyCore {
    pub fn new() -> Self {
        let grus = (0..GRU_LAYERS)
            .map(|l| {
                let input = if l == 0 { 2 * EMBED_DIM } else { HIDDEN_DIM };
                GruCell::new(&format!("{POLICY_PREFIX}gru{}", l + 1), input, HIDDEN_DIM)
            })
            .collect();
        Self {
            grus,
            actor: Linear::new(&format!("{POLICY_PREFIX}actor"), HIDDEN_DIM, NUM_ACTIONS).with_gain(0.01),
            critic: Linear::new(&format!("{POLICY_PREFIX}critic"), HIDDEN_DIM, 1),
        }
    }

    pub fn init<T: Real>(&self, ps: &mut ParameterSet<T>, rng: &mut ChaCha8Rng) -> Result<()> {
        for gru in &self.grus {
            gru.init(ps, rng)?;
        }
        self.actor.init(ps, rng)?;
        self.critic.init(ps, rng)?;
        Ok(())
    }

    pub fn bind<T: Real>(&self, g: &mut Graph<T>, ps: &ParameterSet<T>) -> Result<BoundPolicy> {
        Ok(BoundPolicy {
            grus: self.grus.iter().map(|c| c.bind(g, ps)).collect::<zsel_nn::Result<_>>()?,
            actor: self.actor.bind(g, ps)?,
            critic: self.critic.bind(g, ps)?,
        })
    }
}

impl BoundPolicy {
    /// One recurrent step. `mask: [N]` multiplies the incoming hidden rows,
    /// so a zero entry restarts that row from the zero state.
    pub fn step<T: Real>(
        &self,
        g: &mut Graph<T>,
        obs_emb: Var,
        goal_emb: Var,
        hidden: &[Var],
        mask: Option<Var>,
    ) -> Result<PolicyOutput> {
        let mut x = g.concat(&[obs_emb, goal_emb], 1)?;
        let mut next = Vec::with_capacity(self.grus.len());
        for (gru, &h) in self.grus.iter().zip(hidden) {
            let h = match mask {
                Some(m) => g.scale_rows(h, m)?,
                None => h,
            };
            x = gru.step(g, x, h)?;
            next.push(x);
        }
        let logits = self.actor.forward(g, x)?;
        let v = self.critic.forward(g, x)?;
        let n = g.shape(v)[0];
        let value = g.reshape(v, &[n])?;
        Ok(PolicyOutput { logits, value, hidden: next })
    }
}

/// Full module layout of an agent whose goals come in `modality`.
#[derive(Debug, Clone)]
pub struct AgentNet {
    pub modality: Modality,
    pub obs: ConvEncoder,
    pub goal: GoalEncoder,
    pub policy: PolicyCore,
}

impl AgentNet {
    pub fn new(modality: Modality) -> Self {
        Self { modality, obs: ConvEncoder::new(OBS_PREFIX), goal: GoalEncoder::new(modality), policy: PolicyCore::new() }
    }

    pub fn goal_prefix(&self) -> String {
        goal_prefix(self.modality)
    }

    /// Module prefixes in the order `f_O`, `f_G`, `pi`.
    pub fn prefixes(&self) -> [String; 3] {
        [OBS_PREFIX.to_string(), self.goal_prefix(), POLICY_PREFIX.to_string()]
    }
}

/// Fresh parameters for every module of `net`. Each module draws from its
/// own stream derived from `seed` and its prefix, so the values of one
/// module do not depend on which other modules are present.
pub fn init_parameters<T: Real>(net: &AgentNet, seed: u64) -> Result<ParameterSet<T>> {
    let mut ps = ParameterSet::new();
    init_module(&mut ps, seed, OBS_PREFIX, |ps, rng| net.obs.init(ps, rng))?;
    init_module(&mut ps, seed, &net.goal_prefix(), |ps, rng| net.goal.init(ps, rng))?;
    init_module(&mut ps, seed, POLICY_PREFIX, |ps, rng| net.policy.init(ps, rng))?;
    Ok(ps)
}

pub(crate) fn module_rng(seed: u64, prefix: &str) -> ChaCha8Rng {
    let label = prefix.bytes().fold(0u64, |h, b| h.wrapping_mul(0x100_0000_01b3) ^ u64::from(b));
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label))
}

pub(crate) fn init_module<T: Real>(
    ps: &mut ParameterSet<T>,
    seed: u64,
    prefix: &str,
    f: impl FnOnce(&mut ParameterSet<T>, &mut ChaCha8Rng) -> Result<()>,
) -> Result<()> {
    let mut rng = module_rng(seed, prefix);
    f(ps, &mut rng)
}

/// Stack observations into an `[N, 3, H, W]` tensor.
pub fn images_to_tensor<T: Real>(images: &[&Observation]) -> Result<Tensor<T>> {
    let first = images.first().ok_or(Error::Empty("image batch"))?;
    let (h, w) = (first.height, first.width);
    let mut chw = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if (img.height, img.width) != (h, w) {
            return Err(Error::Config(format!("image batch mixes {h}x{w} and {}x{}", img.height, img.width)));
        }
        img.extend_chw(&mut chw);
    }
    Ok(Tensor::new(&[images.len(), 3, h, w], chw.into_iter().map(|v| T::lit(v as f64)).collect())?)
}

/// Encoder input for a batch of goals of one modality: `[N, 3, H, W]` for
/// image-like goals, one-hot `[N, 6]` for labels, `[N, 16]` for audio.
pub fn goal_input<T: Real>(modality: Modality, goals: &[&GoalDescriptor]) -> Result<Tensor<T>> {
    if goals.is_empty() {
        return Err(Error::Empty("goal batch"));
    }
    for goal in goals {
        if goal.modality() != modality {
            return Err(Error::ModalityMismatch { expected: modality.to_string(), found: goal.modality().to_string() });
        }
        goal.validate()?;
    }
    let n = goals.len();
    match modality {
        Modality::Image | Modality::Sketch | Modality::Edgemap => {
            let imgs: Vec<&Observation> = goals.iter().map(|g| g.image().expect("image-like")).collect();
            images_to_tensor(&imgs)
        }
        Modality::Label => {
            let mut t = Tensor::zeros(&[n, LABEL_VOCAB]);
            for (i, goal) in goals.iter().enumerate() {
                let GoalDescriptor::Label(c) = goal else { unreachable!("checked above") };
                t.data_mut()[i * LABEL_VOCAB + c] = T::one();
            }
            Ok(t)
        }
        Modality::Audio => {
            let mut data = Vec::with_capacity(n * AUDIO_DIM);
            for goal in goals {
                let GoalDescriptor::Audio(v) = goal else { unreachable!("checked above") };
                data.extend(v.iter().map(|&x| T::lit(x as f64)));
            }
            Ok(Tensor::new(&[n, AUDIO_DIM], data)?)
        }
    }
}
