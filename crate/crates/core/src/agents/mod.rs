//! Transferable agent modules: the observation encoder `f_O`, per-modality
//! goal encoders `f_G^M` and the recurrent actor-critic policy `pi`.
//!
//! Every module stores its parameters under its own name prefix inside one
//! [`ParameterSet`]: `fo.` for the observation encoder, `fg.<modality>.` for
//! a goal encoder and `pi.` for the policy. A module can therefore be copied
//! between checkpoints by prefix without touching the others.

mod assembly;
mod nets;

pub use assembly::{
    assemble, Assembly, AssemblyManifest, CheckpointRef, ModuleSource, ModuleSources, Provenance,
};
pub use nets::{
    goal_input, images_to_tensor, init_parameters, AgentNet, BoundPolicy, ConvEncoder, GoalEncoder, PolicyCore, PolicyOutput,
};

pub(crate) use nets::init_module;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::render::Modality;

/// Width of every observation and goal embedding.
pub const EMBED_DIM: usize = 128;
/// Hidden width of each recurrent layer.
pub const HIDDEN_DIM: usize = 128;
/// Number of stacked recurrent layers.
pub const GRU_LAYERS: usize = 2;
pub const NUM_ACTIONS: usize = 4;
/// Size of the label vocabulary fed to label goal encoders.
pub const LABEL_VOCAB: usize = 6;

pub const OBS_PREFIX: &str = "fo.";
pub const POLICY_PREFIX: &str = "pi.";

/// Parameter prefix of the goal encoder for `modality`, e.g. `fg.label.`.
pub fn goal_prefix(modality: Modality) -> String {
    format!("fg.{}.", modality.name())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    MoveForward,
    TurnLeft,
    TurnRight,
    Stop,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::MoveForward, Action::TurnLeft, Action::TurnRight, Action::Stop];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Recurrent state carried between steps: one row of [`HIDDEN_DIM`] values
/// per recurrent layer, flattened layer-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState(pub Vec<f32>);

impl HiddenState {
    /// State at episode start.
    pub fn zeros() -> Self {
        Self(vec![0.0; GRU_LAYERS * HIDDEN_DIM])
    }

    pub fn layer(&self, l: usize) -> &[f32] {
        &self.0[l * HIDDEN_DIM..(l + 1) * HIDDEN_DIM]
    }
}

impl Default for HiddenState {
    fn default() -> Self {
        Self::zeros()
    }
}

/// Result of one policy step for a single agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ActOutput {
    pub logits: [f32; NUM_ACTIONS],
    pub value: f32,
    pub hidden: HiddenState,
}

impl ActOutput {
    pub fn probs(&self) -> [f64; NUM_ACTIONS] {
        let m = self.logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut p = self.logits.map(|l| (l as f64 - m).exp());
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= z);
        p
    }

    pub fn log_prob(&self, a: Action) -> f64 {
        self.probs()[a.index()].ln()
    }

    /// Highest-probability action; ties resolve to the lowest index.
    pub fn greedy(&self) -> Action {
        let mut best = 0;
        for i in 1..NUM_ACTIONS {
            if self.logits[i] > self.logits[best] {
                best = i;
            }
        }
        Action::ALL[best]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        let p = self.probs();
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return Action::ALL[i];
            }
        }
        Action::ALL[NUM_ACTIONS - 1]
    }

    /// Greedy or sampled action selection.
    pub fn select<R: Rng + ?Sized>(&self, greedy: bool, rng: &mut R) -> Action {
        if greedy {
            self.greedy()
        } else {
            self.sample(rng)
        }
    }
}
