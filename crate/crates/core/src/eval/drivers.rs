//! Experiment drivers: source training, goal alignment, zero-shot
//! evaluation, fine-tuning and task experts, with their file outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use zsel_nn::checkpoint::{decode, encode};
use zsel_nn::ParameterSet;

use super::config::{ExperimentConfig, TransferSet};
use super::evaluate::{evaluate, EvalOptions, EvalReport, PolicyAgent};
use super::metrics::steps_to_reference;
use crate::agents::{assemble, goal_prefix, Assembly, CheckpointRef, ModuleSources, OBS_PREFIX, POLICY_PREFIX};
use crate::episodes::{
    build_pair_dataset, build_retrieval_probes, sample_episode, train_test_instance_split, Difficulty, EpisodeConfig, EpisodeSpec, GoalRequest,
    InstanceSplit, LabelVocab, PairDataset, PairSpec, RetrievalProbe, Task,
};
use crate::error::{Error, Result};
use crate::goalspace::{train_goal_encoder, AlignmentConfig, AlignmentReport};
use crate::render::{Modality, RenderConfig};
use crate::rltrain::{ActuationNoise, EnvConfig, EpisodePool, PpoConfig, RewardConfig, RolloutConfig, Trainer, TrainerConfig, UpdateLog};
use crate::util::{derive_seed, git_blob_hash};
use crate::worldgen::{generate_floorplan, FloorPlan, GeneratorParams};

/// Offset between training and evaluation plan seeds.
pub const EVAL_PLAN_OFFSET: u64 = 10_000;
/// Offset between training and evaluation episode ids.
pub const EVAL_EPISODE_OFFSET: u64 = 1 << 32;

/// Training and held-out evaluation worlds.
#[derive(Debug, Clone)]
pub struct Worlds {
    pub train: Vec<Arc<FloorPlan>>,
    pub eval: Vec<Arc<FloorPlan>>,
}

fn generator_params(cfg: &ExperimentConfig) -> GeneratorParams {
    GeneratorParams { width: cfg.plan_size, height: cfg.plan_size, ..GeneratorParams::default() }.with_style(cfg.plan_style)
}

/// Worlds are determined by `world_seed` alone.
pub fn build_worlds(cfg: &ExperimentConfig) -> Result<Worlds> {
    let params = generator_params(cfg);
    let gen = |base: u64, n: usize| -> Result<Vec<Arc<FloorPlan>>> {
        (0..n as u64).map(|i| generate_floorplan(base + i, &params).map(Arc::new)).collect()
    };
    Ok(Worlds { train: gen(cfg.world_seed, cfg.train_plans)?, eval: gen(cfg.world_seed + EVAL_PLAN_OFFSET, cfg.eval_plans)? })
}

pub fn render_config(cfg: &ExperimentConfig) -> RenderConfig {
    RenderConfig::default().with_resolution(cfg.resolution)
}

fn episode_config(cfg: &ExperimentConfig) -> EpisodeConfig {
    EpisodeConfig { render: render_config(cfg), ..EpisodeConfig::default() }
}

/// Disjoint sketch-variant or audio-noise pools, fixed by `world_seed`.
pub fn instance_split(cfg: &ExperimentConfig) -> Result<Option<InstanceSplit>> {
    match cfg.modality {
        Modality::Sketch | Modality::Audio => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.world_seed, 0x5e1));
            Ok(Some(train_test_instance_split(cfg.modality, &mut rng)?))
        }
        _ => Ok(None),
    }
}

/// Sample `n` episodes spread over `plans` round-robin. A fixed difficulty
/// applies to every episode; otherwise tiers cycle easy, medium, hard.
pub fn sample_episode_set(
    plans: &[Arc<FloorPlan>],
    cfg: &ExperimentConfig,
    n: usize,
    difficulty: Option<Difficulty>,
    id_base: u64,
    seeds: Option<Vec<Vec<u64>>>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EpisodeSpec>> {
    if plans.is_empty() {
        return Err(Error::Empty("plans"));
    }
    let ecfg = episode_config(cfg);
    let mut request = GoalRequest::task(cfg.task).with_modality(cfg.modality);
    if let Some(s) = seeds {
        request = request.with_seeds(s);
    }
    let mut out = Vec::with_capacity(n);
    let mut failures = 0;
    let mut k = 0usize;
    while out.len() < n {
        let plan = &plans[k % plans.len()];
        let d = difficulty.unwrap_or(Difficulty::ALL[out.len() % 3]);
        k += 1;
        match sample_episode(plan, &request, d, &ecfg, id_base + out.len() as u64, rng) {
            Ok(ep) => out.push(ep),
            Err(Error::EpisodeSampling { .. } | Error::NoGoalInstances { .. }) => {
                failures += 1;
                if failures > 20 * n.max(plans.len()) {
                    return Err(Error::EpisodeSampling { constraint: format!("{n} {} episodes", cfg.task), attempts: failures as u32 });
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Fixed training and evaluation episode sets of a configuration.
#[derive(Debug, Clone)]
pub struct EpisodeSets {
    pub train: Vec<EpisodeSpec>,
    pub eval: Vec<EpisodeSpec>,
}

/// Episode sets are determined by `world_seed` and the task settings; the
/// run seed does not change them.
pub fn build_episode_sets(cfg: &ExperimentConfig, worlds: &Worlds) -> Result<EpisodeSets> {
    let split = instance_split(cfg)?;
    let label = (cfg.task.name().len() as u64) << 8 | cfg.modality.name().len() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.world_seed, 0xe915 ^ label));
    let train = sample_episode_set(&worlds.train, cfg, cfg.train_episodes * worlds.train.len(), cfg.train_difficulty, 0, split.as_ref().map(|s| s.train.clone()), &mut rng)?;
    let eval = sample_episode_set(&worlds.eval, cfg, cfg.eval_episodes, cfg.eval_difficulty, EVAL_EPISODE_OFFSET, split.map(|s| s.test), &mut rng)?;
    Ok(EpisodeSets { train, eval })
}

/// Evaluation options of a configuration: `eval_seeds` seeds derived from
/// the run seed.
pub fn eval_options(cfg: &ExperimentConfig) -> EvalOptions {
    EvalOptions {
        seeds: (0..cfg.eval_seeds as u64).map(|i| derive_seed(cfg.seed, 0xe7a1 + i)).collect(),
        greedy: cfg.greedy,
        env: env_config(cfg),
        lanes: cfg.workers.max(8),
        keep_trajectories: false,
    }
}

pub fn env_config(cfg: &ExperimentConfig) -> EnvConfig {
    EnvConfig {
        render: render_config(cfg),
        reward: cfg.arm.reward(RewardConfig::default()),
        noise: cfg.noisy_actuation.then(ActuationNoise::default),
    }
}

pub fn trainer_config(cfg: &ExperimentConfig, frozen: Vec<String>) -> TrainerConfig {
    TrainerConfig {
        seed: cfg.seed,
        workers: cfg.workers,
        rollout: RolloutConfig { horizon: cfg.horizon, env: env_config(cfg), ..RolloutConfig::default() },
        ppo: PpoConfig {
            lr: cfg.lr,
            entropy_coef: cfg.entropy_coef,
            epochs: cfg.ppo_epochs,
            num_minibatches: cfg.minibatches,
            chunk_len: cfg.chunk_len,
            ..PpoConfig::default()
        },
        frozen,
    }
}

/// A file the run read or wrote, with its git-style content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedFile {
    pub role: String,
    pub path: PathBuf,
    pub sha1: String,
}

pub fn hash_file(role: &str, path: &Path) -> Result<HashedFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::MissingArtifact(format!("{role} {}: {e}", path.display())))?;
    Ok(HashedFile { role: role.to_string(), path: path.to_path_buf(), sha1: git_blob_hash(&bytes) })
}

/// One evaluation point of a learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub env_steps: u64,
    pub seed: u64,
    pub report: EvalReport,
}

pub const CURVE_HEADER: &str = "env_steps,seed,succ,succ_std,spl,spl_std,succ_easy,spl_easy,succ_medium,spl_medium,succ_hard,spl_hard";

/// CSV row of a curve point; missing tiers are left empty.
pub fn curve_row(p: &CurvePoint) -> String {
    let s = &p.report.summary;
    let mut row = format!("{},{},{},{},{},{}", p.env_steps, p.seed, s.succ.mean, s.succ.std, s.spl.mean, s.spl.std);
    for d in Difficulty::ALL {
        match p.report.tiers.get(&d) {
            Some(t) => row.push_str(&format!(",{},{}", t.succ.mean, t.spl.mean)),
            None => row.push_str(",,"),
        }
    }
    row
}

/// Results record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub kind: String,
    pub config: ExperimentConfig,
    pub inputs: Vec<HashedFile>,
    pub outputs: Vec<HashedFile>,
    pub env_steps: u64,
    pub updates: u64,
    /// Optimizer steps applied to the evaluated assembly.
    pub update_count: u64,
    pub final_eval: Option<EvalReport>,
    pub steps_to_reference: Option<f64>,
}

impl RunResults {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("results.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn prepare_out(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.echo"), cfg.echo())?;
    Ok(())
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub assembly: Assembly,
    pub checkpoints: Vec<(u64, PathBuf)>,
    pub curve: Vec<CurvePoint>,
    pub logs: Vec<UpdateLog>,
    pub results: RunResults,
}

/// PPO loop shared by source training, fine-tuning and task experts.
/// Writes `metrics.jsonl` (one deterministic line per update),
/// `timing.jsonl` (wall-clock seconds per update), checkpoints at the
/// configured cadence, `curve.csv` and `results.json`.
fn train_loop(kind: &str, cfg: &ExperimentConfig, assembly: Assembly, frozen: Vec<String>, inputs: Vec<HashedFile>, out: &Path) -> Result<TrainingOutcome> {
    let worlds = build_worlds(cfg)?;
    let sets = build_episode_sets(cfg, &worlds)?;
    let pool = EpisodePool::new(worlds.train.clone(), sets.train, render_config(cfg))?;
    let mut trainer = Trainer::new(assembly, pool, trainer_config(cfg, frozen))?;
    let ckpt_dir = out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;
    let mut metrics = BufWriter::new(File::create(out.join("metrics.jsonl"))?);
    let mut timing = BufWriter::new(File::create(out.join("timing.jsonl"))?);
    let mut curve_file = BufWriter::new(File::create(out.join("curve.csv"))?);
    writeln!(curve_file, "{CURVE_HEADER}")?;
    let opts = eval_options(cfg);
    let mut curve = Vec::new();
    let mut checkpoints = Vec::new();
    let mut logs = Vec::new();
    let eval_point = |trainer: &Trainer, curve: &mut Vec<CurvePoint>, file: &mut BufWriter<File>| -> Result<()> {
        let mut agent = PolicyAgent::new(&trainer.assembly, opts.greedy);
        let report = evaluate(&mut agent, &worlds.eval, &sets.eval, &opts)?;
        let p = CurvePoint { env_steps: trainer.env_steps(), seed: cfg.seed, report };
        writeln!(file, "{}", curve_row(&p))?;
        file.flush()?;
        curve.push(p);
        Ok(())
    };
    if cfg.eval_every > 0 {
        eval_point(&trainer, &mut curve, &mut curve_file)?;
    }
    while trainer.env_steps() < cfg.train_steps {
        let before = trainer.env_steps();
        let t0 = Instant::now();
        let log = trainer.update()?;
        let secs = t0.elapsed().as_secs_f64();
        serde_json::to_writer(&mut metrics, &log)?;
        writeln!(metrics)?;
        writeln!(timing, "{{\"update\":{},\"seconds\":{secs}}}", log.update)?;
        logs.push(log);
        let now = trainer.env_steps();
        let crossed = |every: u64| every > 0 && now / every > before / every;
        if crossed(cfg.checkpoint_every) {
            let path = ckpt_dir.join(format!("ckpt_{now:012}.bin"));
            trainer.assembly.save(&path)?;
            checkpoints.push((now, path));
        }
        if crossed(cfg.eval_every) {
            eval_point(&trainer, &mut curve, &mut curve_file)?;
        }
    }
    metrics.flush()?;
    timing.flush()?;
    let final_path = out.join("final.bin");
    trainer.assembly.save(&final_path)?;
    let mut outputs = vec![hash_file("final", &final_path)?];
    for (_, p) in &checkpoints {
        outputs.push(hash_file("checkpoint", p)?);
    }
    let final_eval = match curve.last() {
        Some(p) if p.env_steps == trainer.env_steps() => p.report.clone(),
        _ => {
            eval_point(&trainer, &mut curve, &mut curve_file)?;
            curve.last().expect("just pushed").report.clone()
        }
    };
    curve_file.flush()?;
    let points: Vec<(u64, f64)> = curve.iter().map(|p| (p.env_steps, p.report.summary.succ.mean)).collect();
    let results = RunResults {
        kind: kind.to_string(),
        config: cfg.clone(),
        inputs,
        outputs,
        env_steps: trainer.env_steps(),
        updates: trainer.updates(),
        update_count: trainer.assembly.update_count(),
        final_eval: Some(final_eval),
        steps_to_reference: cfg.reference_succ.and_then(|r| steps_to_reference(&points, r)),
    };
    results.save(out)?;
    Ok(TrainingOutcome { assembly: trainer.assembly, checkpoints, curve, logs, results })
}

/// Train an image-goal agent from scratch with the configured reward arm.
pub fn run_source_training(cfg: &ExperimentConfig, out: &Path) -> Result<TrainingOutcome> {
    if cfg.task != Task::ImageNav {
        return Err(Error::Config(format!("source training runs on imagenav, not {}", cfg.task)));
    }
    prepare_out(cfg, out)?;
    let assembly = Assembly::fresh(Modality::Image, cfg.seed)?;
    train_loop("train-source", cfg, assembly, Vec::new(), Vec::new(), out)
}

/// Assemble an agent for the configured task: modules in `cfg.transfer`
/// come from the source checkpoint (`f_O`, `pi`, and `f_G` for image goals)
/// or the aligned goal encoder (`f_G` for other modalities); the rest are
/// fresh from the run seed.
pub fn transfer_assembly(cfg: &ExperimentConfig) -> Result<(Assembly, Vec<HashedFile>)> {
    let t = cfg.transfer;
    let need = |key: &str, p: &Option<PathBuf>| -> Result<PathBuf> {
        let path = p.clone().ok_or_else(|| Error::MissingArtifact(format!("`{key}` checkpoint is required for the transferred modules ({t})")))?;
        if !path.exists() {
            return Err(Error::MissingArtifact(format!("`{key}` checkpoint {} does not exist", path.display())));
        }
        Ok(path)
    };
    let mut inputs = Vec::new();
    let mut sources = ModuleSources::default();
    if t.fo || t.pi || (t.fg && cfg.modality == Modality::Image) {
        let src = need("source", &cfg.source)?;
        inputs.push(hash_file("source", &src)?);
        if t.fo {
            sources.fo = Some(CheckpointRef::new(&src));
        }
        if t.pi {
            sources.pi = Some(CheckpointRef::new(&src));
        }
        if t.fg && cfg.modality == Modality::Image {
            sources.fg = Some(CheckpointRef::new(&src));
        }
    }
    if t.fg && cfg.modality != Modality::Image {
        let enc = need("goal_encoder", &cfg.goal_encoder)?;
        inputs.push(hash_file("goal_encoder", &enc)?);
        sources.fg = Some(CheckpointRef::new(&enc));
    }
    Ok((assemble(&sources, cfg.modality, Some(cfg.seed))?, inputs))
}

/// Zero-shot evaluation of a transferred assembly: no environment
/// interaction on the target task other than evaluation, no updates.
pub fn run_zsel(cfg: &ExperimentConfig, out: &Path) -> Result<RunResults> {
    prepare_out(cfg, out)?;
    let (assembly, inputs) = transfer_assembly(cfg)?;
    let worlds = build_worlds(cfg)?;
    let sets = build_episode_sets(cfg, &worlds)?;
    let mut agent = PolicyAgent::new(&assembly, cfg.greedy);
    let report = evaluate(&mut agent, &worlds.eval, &sets.eval, &eval_options(cfg))?;
    if assembly.update_count() != 0 {
        return Err(Error::Config(format!("zero-shot assembly has {} optimizer updates", assembly.update_count())));
    }
    let results = RunResults {
        kind: "zsel-eval".into(),
        config: cfg.clone(),
        inputs,
        outputs: Vec::new(),
        env_steps: 0,
        updates: 0,
        update_count: assembly.update_count(),
        final_eval: Some(report),
        steps_to_reference: None,
    };
    results.save(out)?;
    write_episode_logs(out, results.final_eval.as_ref().expect("set"))?;
    Ok(results)
}

/// Fine-tune a transferred assembly on the target task. Modules listed in
/// `cfg.freeze` stay fixed.
pub fn run_finetune(cfg: &ExperimentConfig, out: &Path) -> Result<TrainingOutcome> {
    prepare_out(cfg, out)?;
    let (assembly, inputs) = transfer_assembly(cfg)?;
    let mut frozen = Vec::new();
    if cfg.freeze.fo {
        frozen.push(OBS_PREFIX.to_string());
    }
    if cfg.freeze.fg {
        frozen.push(goal_prefix(cfg.modality));
    }
    if cfg.freeze.pi {
        frozen.push(POLICY_PREFIX.to_string());
    }
    train_loop("finetune", cfg, assembly, frozen, inputs, out)
}

/// Train a task expert from scratch on the target task.
pub fn run_task_expert(cfg: &ExperimentConfig, out: &Path) -> Result<TrainingOutcome> {
    let cfg = ExperimentConfig { transfer: TransferSet::NONE, freeze: TransferSet::NONE, ..cfg.clone() };
    prepare_out(&cfg, out)?;
    let assembly = Assembly::fresh(cfg.modality, cfg.seed)?;
    train_loop("train-expert", &cfg, assembly, Vec::new(), Vec::new(), out)
}

/// Evaluate an assembly checkpoint (all modules from one file) on the
/// configured task.
pub fn run_eval(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<RunResults> {
    prepare_out(cfg, out)?;
    let input = hash_file("checkpoint", checkpoint)?;
    let assembly = assemble(&ModuleSources::all(checkpoint), cfg.modality, None)?;
    let worlds = build_worlds(cfg)?;
    let sets = build_episode_sets(cfg, &worlds)?;
    let mut opts = eval_options(cfg);
    opts.keep_trajectories = true;
    let mut agent = PolicyAgent::new(&assembly, cfg.greedy);
    let report = evaluate(&mut agent, &worlds.eval, &sets.eval, &opts)?;
    let results = RunResults {
        kind: "eval".into(),
        config: cfg.clone(),
        inputs: vec![input],
        outputs: Vec::new(),
        env_steps: 0,
        updates: 0,
        update_count: assembly.update_count(),
        final_eval: Some(report),
        steps_to_reference: None,
    };
    results.save(out)?;
    write_episode_logs(out, results.final_eval.as_ref().expect("set"))?;
    Ok(results)
}

/// One JSON line per evaluated episode in `episodes.jsonl`.
pub fn write_episode_logs(out: &Path, report: &EvalReport) -> Result<()> {
    let mut f = BufWriter::new(File::create(out.join("episodes.jsonl"))?);
    for e in &report.episodes {
        serde_json::to_writer(&mut f, e)?;
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

fn pair_spec(cfg: &ExperimentConfig, size: usize, split: Option<InstanceSplit>) -> PairSpec {
    PairSpec {
        modality: cfg.modality,
        size,
        vocab: if cfg.task == Task::RoomNav { LabelVocab::Rooms } else { LabelVocab::Objects },
        split,
        render: render_config(cfg),
    }
}

/// Pair dataset on the training worlds and retrieval probes on the
/// evaluation worlds for the configured goal modality.
pub fn build_alignment_data(cfg: &ExperimentConfig, worlds: &Worlds) -> Result<(PairDataset, Vec<RetrievalProbe>)> {
    let spec = pair_spec(cfg, cfg.pairs, instance_split(cfg)?);
    let train: Vec<FloorPlan> = worlds.train.iter().map(|p| (**p).clone()).collect();
    let eval: Vec<FloorPlan> = worlds.eval.iter().map(|p| (**p).clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.world_seed, 0xda7a));
    let ds = build_pair_dataset(&train, &spec, &mut rng)?;
    let probes = if cfg.probes > 0 { build_retrieval_probes(&eval, &spec, cfg.probes, &mut rng)? } else { Vec::new() };
    Ok((ds, probes))
}

/// Outcome of an alignment run.
#[derive(Debug, Clone)]
pub struct AlignmentRunOutcome {
    pub encoder_path: PathBuf,
    pub report: AlignmentReport,
    pub results: RunResults,
}

/// Align the configured modality's goal encoder to the image-goal encoder
/// of the source checkpoint. Writes `fg_<modality>.bin`, `alignment.json`
/// and `results.json`.
pub fn run_alignment(cfg: &ExperimentConfig, out: &Path) -> Result<AlignmentRunOutcome> {
    if cfg.modality == Modality::Image {
        return Err(Error::Config("alignment needs a non-image goal modality".into()));
    }
    prepare_out(cfg, out)?;
    let src = cfg.source.clone().ok_or_else(|| Error::MissingArtifact("`source` checkpoint with the image-goal encoder".into()))?;
    let input = hash_file("source", &src)?;
    let anchor: ParameterSet<f32> = decode(&std::fs::read(&src)?)?;
    let worlds = build_worlds(cfg)?;
    let (ds, probes) = build_alignment_data(cfg, &worlds)?;
    let acfg = AlignmentConfig { seed: cfg.seed, batch_size: cfg.align_batch, lr: cfg.align_lr, max_epochs: cfg.align_epochs, ..AlignmentConfig::default() };
    let outcome = train_goal_encoder(&anchor, &ds, (!probes.is_empty()).then_some(probes.as_slice()), &acfg)?;
    let encoder_path = out.join(format!("fg_{}.bin", cfg.modality.name()));
    std::fs::write(&encoder_path, encode(&outcome.encoder))?;
    outcome.report.save(out.join("alignment.json"))?;
    let results = RunResults {
        kind: "align-goals".into(),
        config: cfg.clone(),
        inputs: vec![input],
        outputs: vec![hash_file("goal_encoder", &encoder_path)?],
        env_steps: 0,
        updates: 0,
        update_count: 0,
        final_eval: None,
        steps_to_reference: None,
    };
    results.save(out)?;
    Ok(AlignmentRunOutcome { encoder_path, report: outcome.report, results })
}
