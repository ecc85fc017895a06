use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("utterance too short: {frames} frames, need at least {required}")]
    UtteranceTooShort { frames: usize, required: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward has already been run on this tape")]
    BackwardTwice,
    #[error("path enumeration limited to C + U <= {limit}, got {got}")]
    EnumerationTooLarge { limit: usize, got: usize },
    #[error("target sequence has zero probability under the alignment grid")]
    ImpossibleTarget,
    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("topology mismatch: {0}")]
    Topology(String),
    #[error("stream session already finalized")]
    Finalized,
}
