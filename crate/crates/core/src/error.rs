use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("inverted interval {video_id}[{index}]: start {start} >= end {end}")]
    InvertedInterval {
        video_id: String,
        index: usize,
        start: f64,
        end: f64,
    },

    #[error("interval {video_id}[{index}] = [{start}, {end}] is outside video of duration {duration}")]
    IntervalOutOfRange {
        video_id: String,
        index: usize,
        start: f64,
        end: f64,
        duration: f64,
    },

    #[error("video {video_id}: {timestamps} timestamps but {sentences} sentences")]
    LengthMismatch {
        video_id: String,
        timestamps: usize,
        sentences: usize,
    },

    #[error("score out of range for {video_id}[{index}]: proposal_score {score} not in [0, 1]")]
    ScoreOutOfRange {
        video_id: String,
        index: usize,
        score: f64,
    },

    #[error("unknown video_id {0}")]
    UnknownVideo(String),

    #[error("invalid interval [{start}, {end}]")]
    InvalidInterval { start: f64, end: f64 },

    #[error("invalid video metadata for {video_id}: {reason}")]
    InvalidMeta { video_id: String, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("grid for {0} has no features")]
    MissingFeatures(String),

    #[error("empty context selection")]
    EmptyContext,

    #[error("invalid distribution at step {step}: {reason}")]
    InvalidDistribution { step: usize, reason: String },

    #[error("{0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("concept vocabulary is empty")]
    EmptyVocabulary,

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("prediction {video_id}[{index}] has no sentence")]
    MissingSentence { video_id: String, index: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the underlying filesystem rather than of content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
