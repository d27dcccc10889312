use thiserror::Error;
use zsel_nn::NnError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("floorplan generation failed for seed {seed} after {attempts} attempts: {reason}")]
    GenerationFailed { seed: u64, attempts: u32, reason: String },
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("goal unreachable from start")]
    Unreachable,
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no instance of `{category}` in plan")]
    NoGoalInstances { category: String },
    #[error("episode sampling failed after {attempts} attempts: {constraint}")]
    EpisodeSampling { constraint: String, attempts: u32 },
    #[error("requested {requested} positives but only {available} distinct positives were found")]
    DatasetExhausted { requested: usize, available: usize },
    #[error("goal modality `{found}` does not match expected `{expected}`")]
    ModalityMismatch { expected: String, found: String },
    #[error("action issued after episode end")]
    EpisodeFinished,
    #[error("no free viewpoint near object {0}")]
    NoViewpoint(usize),
    #[error("anchor encoder changed during alignment (checksum {before:#x} -> {after:#x})")]
    FreezeViolation { before: u64, after: u64 },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("configuration: {0}")]
    Config(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("environment worker {worker}: {source}")]
    Worker { worker: usize, source: Box<Error> },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
