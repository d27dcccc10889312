//! Plug-and-play assembly of agents from independently sourced modules.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zsel_nn::checkpoint::{decode, encode};
use zsel_nn::{load_into, Graph, LoadMode, ParameterSet, Tensor};

use super::nets::{goal_input, images_to_tensor, init_parameters, AgentNet};
use super::{ActOutput, HiddenState, EMBED_DIM, GRU_LAYERS, HIDDEN_DIM, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::render::{GoalDescriptor, Modality, Observation};
use crate::util::git_blob_hash;

/// A checkpoint file supplying one module.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointRef {
    pub path: PathBuf,
}

impl CheckpointRef {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }
}

/// Where each module of an assembly comes from; `None` means freshly
/// initialized, which requires a fresh-init seed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ModuleSources {
    pub fo: Option<CheckpointRef>,
    pub fg: Option<CheckpointRef>,
    pub pi: Option<CheckpointRef>,
}

impl ModuleSources {
    /// Every module from the same checkpoint.
    pub fn all(path: impl Into<PathBuf>) -> Self {
        let c = CheckpointRef::new(path);
        Self { fo: Some(c.clone()), fg: Some(c.clone()), pi: Some(c) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ModuleSource {
    Fresh { seed: u64 },
    Checkpoint { path: PathBuf, sha1: String, blocks: Vec<String> },
}

/// Origin of the `f_O`, `f_G` and `pi` modules of an assembly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub fo: ModuleSource,
    pub fg: ModuleSource,
    pub pi: ModuleSource,
}

/// JSON manifest describing how an assembly was built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssemblyManifest {
    pub format: String,
    pub modality: Modality,
    pub modules: Provenance,
}

pub const MANIFEST_FORMAT: &str = "zsel-assembly v1";

impl AssemblyManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Config(format!("unsupported manifest format `{}`", m.format)));
        }
        Ok(m)
    }

    /// Rebuild the assembly the manifest describes, verifying checkpoint hashes.
    pub fn assemble(&self) -> Result<Assembly> {
        let mut fresh_seed = None;
        let mut pick = |m: &ModuleSource| -> Result<Option<CheckpointRef>> {
            match m {
                ModuleSource::Fresh { seed } => {
                    fresh_seed = Some(*seed);
                    Ok(None)
                }
                ModuleSource::Checkpoint { path, sha1, .. } => {
                    let found = git_blob_hash(&std::fs::read(path)?);
                    if &found != sha1 {
                        return Err(Error::Config(format!("checkpoint {} has hash {found}, manifest expects {sha1}", path.display())));
                    }
                    Ok(Some(CheckpointRef::new(path)))
                }
            }
        };
        let sources = ModuleSources { fo: pick(&self.modules.fo)?, fg: pick(&self.modules.fg)?, pi: pick(&self.modules.pi)? };
        assemble(&sources, self.modality, fresh_seed)
    }
}

/// An agent built from `f_O`, one `f_G^M` and `pi`.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub net: AgentNet,
    pub params: ParameterSet<f32>,
    pub provenance: Provenance,
}

/// Build an agent for goals of `modality`. Modules with a checkpoint are
/// copied from it by prefix and must match the layout exactly; the rest are
/// initialized from `fresh_seed`. Optimizer state is not carried over.
pub fn assemble(sources: &ModuleSources, modality: Modality, fresh_seed: Option<u64>) -> Result<Assembly> {
    let net = AgentNet::new(modality);
    let [fo_prefix, fg_prefix, pi_prefix] = net.prefixes();
    let mut params: ParameterSet<f32> = init_parameters(&net, fresh_seed.unwrap_or(0))?;
    let mut cache: BTreeMap<PathBuf, (ParameterSet<f32>, String)> = BTreeMap::new();
    let mut load = |prefix: &str, src: &Option<CheckpointRef>, params: &mut ParameterSet<f32>| -> Result<ModuleSource> {
        let Some(src) = src else {
            return match fresh_seed {
                Some(seed) => Ok(ModuleSource::Fresh { seed }),
                None => Err(Error::MissingArtifact(format!("no checkpoint for module `{prefix}` and no fresh-init seed"))),
            };
        };
        if !cache.contains_key(&src.path) {
            let bytes = std::fs::read(&src.path)
                .map_err(|e| Error::MissingArtifact(format!("checkpoint {} for module `{prefix}`: {e}", src.path.display())))?;
            cache.insert(src.path.clone(), (decode(&bytes)?, git_blob_hash(&bytes)));
        }
        let (ckpt, sha1) = &cache[&src.path];
        let report = load_into(params, ckpt, prefix, LoadMode::Strict)?;
        if !report.unexpected.is_empty() {
            return Err(Error::Config(format!(
                "checkpoint {} has blocks {:?} that module `{prefix}` does not define",
                src.path.display(),
                report.unexpected
            )));
        }
        for name in &report.loaded {
            let v = params.get(name).expect("loaded").clone();
            params.set(name, v);
        }
        Ok(ModuleSource::Checkpoint { path: src.path.clone(), sha1: sha1.clone(), blocks: report.loaded })
    };
    let fo = load(&fo_prefix, &sources.fo, &mut params)?;
    let fg = load(&fg_prefix, &sources.fg, &mut params)?;
    let pi = load(&pi_prefix, &sources.pi, &mut params)?;
    params.set_step(0);
    Ok(Assembly { net, params, provenance: Provenance { fo, fg, pi } })
}

impl Assembly {
    /// All modules freshly initialized from `seed`.
    pub fn fresh(modality: Modality, seed: u64) -> Result<Self> {
        assemble(&ModuleSources::default(), modality, Some(seed))
    }

    pub fn modality(&self) -> Modality {
        self.net.modality
    }

    /// Number of optimizer steps applied since assembly.
    pub fn update_count(&self) -> u64 {
        self.params.step()
    }

    pub fn manifest(&self) -> AssemblyManifest {
        AssemblyManifest { format: MANIFEST_FORMAT.into(), modality: self.modality(), modules: self.provenance.clone() }
    }

    /// Write all parameters as a checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, encode(&self.params))?;
        Ok(())
    }

    /// Goal embeddings `f_G^M(g)`, one row per goal.
    pub fn embed_goals(&self, goals: &[&GoalDescriptor]) -> Result<Vec<Vec<f32>>> {
        let mut g = Graph::inference();
        let x = g.constant(goal_input(self.modality(), goals)?);
        let e = self.net.goal.forward(&mut g, &self.params, x)?;
        Ok(g.value(e).data().chunks(EMBED_DIM).map(<[f32]>::to_vec).collect())
    }

    /// One policy step for a batch of agents, given precomputed goal embeddings.
    pub fn act_embedded_batch(&self, obs: &[&Observation], goal_emb: &[&[f32]], hidden: &[&HiddenState]) -> Result<Vec<ActOutput>> {
        let n = obs.len();
        if goal_emb.len() != n || hidden.len() != n {
            return Err(Error::Config(format!("batch sizes differ: {n} observations, {} goals, {} states", goal_emb.len(), hidden.len())));
        }
        if let Some(bad) = goal_emb.iter().find(|e| e.len() != EMBED_DIM) {
            return Err(Error::Config(format!("goal embedding has {} dims, expected {EMBED_DIM}", bad.len())));
        }
        let mut g = Graph::inference();
        let x = g.constant(images_to_tensor(obs)?);
        let eo = self.net.obs.forward(&mut g, &self.params, x)?;
        let eg = g.constant(Tensor::new(&[n, EMBED_DIM], goal_emb.concat())?);
        let hs: Vec<_> = (0..GRU_LAYERS)
            .map(|l| {
                let rows: Vec<f32> = hidden.iter().flat_map(|h| h.layer(l).iter().copied()).collect();
                Ok(g.constant(Tensor::new(&[n, HIDDEN_DIM], rows)?))
            })
            .collect::<Result<_>>()?;
        let policy = self.net.policy.bind(&mut g, &self.params)?;
        let out = policy.step(&mut g, eo, eg, &hs, None)?;
        let logits = g.value(out.logits).data();
        let values = g.value(out.value).data();
        let mut results = Vec::with_capacity(n);
        for i in 0..n {
            let mut h = Vec::with_capacity(GRU_LAYERS * HIDDEN_DIM);
            for &hv in &out.hidden {
                h.extend_from_slice(&g.value(hv).data()[i * HIDDEN_DIM..(i + 1) * HIDDEN_DIM]);
            }
            let mut l = [0f32; NUM_ACTIONS];
            l.copy_from_slice(&logits[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS]);
            if l.iter().any(|v| !v.is_finite()) || !values[i].is_finite() {
                return Err(Error::NonFinite(format!("policy output for batch row {i}")));
            }
            results.push(ActOutput { logits: l, value: values[i], hidden: HiddenState(h) });
        }
        Ok(results)
    }

    /// One policy step for a single agent.
    pub fn act(&self, obs: &Observation, goal: &GoalDescriptor, hidden: &HiddenState) -> Result<ActOutput> {
        let e = self.embed_goals(&[goal])?;
        Ok(self.act_embedded_batch(&[obs], &[&e[0]], &[hidden])?.remove(0))
    }
}
