use crate::signal::Modality;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("modality {0} is missing")]
    MissingModality(Modality),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("parse error at line {line}, field `{field}`: {msg}")]
    Parse {
        line: u64,
        field: String,
        msg: String,
    },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("expected a {expected} split, got {got}")]
    SplitMismatch { expected: String, got: String },
    #[error("heart rate must be > 0 bpm, got {value} at sample {index}")]
    NonPositiveHeartRate { index: usize, value: f64 },
    #[error("weight {index} = {value} is outside [0, 1]")]
    WeightOutOfRange { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    DivergenceDetected { epoch: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("{0} features exceed the exact enumeration limit of 20; use a sampling estimator")]
    TooManyFeatures(usize),
    #[error("k = {k} exceeds the number of components ({d})")]
    KTooLarge { k: usize, d: usize },
    #[error("evaluation set is empty")]
    EmptyEval,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
