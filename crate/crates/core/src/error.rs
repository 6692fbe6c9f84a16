use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch for {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("need at least {needed} evaluated candidates, got {got}")]
    TooFewCandidates { needed: usize, got: usize },

    #[error("population seeding is only allowed at generation 0 (current generation {0})")]
    SeedAfterStart(usize),

    #[error("cannot step environment `{0}`: episode already terminated")]
    StepAfterTerminal(String),

    #[error("snapshot belongs to environment `{found}`, cannot restore into `{expected}`")]
    SnapshotMismatch { expected: String, found: String },

    #[error("unknown environment id `{0}` (expected one of: pointmass, trapswimmer, leanwalker)")]
    UnknownEnv(String),

    #[error("replay buffer holds {len} samples, cannot draw a minibatch of {requested}")]
    BufferTooSmall { len: usize, requested: usize },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Failures when reading or writing a checkpoint container.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("checkpoint {what} is {found} but the environment expects {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("checkpoint was written for environment `{found}`, not `{expected}`")]
    EnvMismatch { expected: String, found: String },
}
