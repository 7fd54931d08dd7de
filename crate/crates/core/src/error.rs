use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no token survived preprocessing")]
    EmptyCorpus,

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("inverted index has no active words")]
    EmptyIndex,

    #[error("not enough negative candidates: {available} eligible, {requested} requested")]
    NotEnoughCandidates { available: usize, requested: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("index {index} out of range (size {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("vocabulary fingerprint mismatch: checkpoint was trained on a different vocabulary")]
    VocabMismatch,

    #[error("corrupt {kind} file: {message}")]
    CorruptFile { kind: &'static str, message: String },

    #[error("non-finite loss\n{0}")]
    NonFiniteLoss(Box<NonFiniteDump>),

    #[error("record {0}: embedding is the zero vector")]
    ZeroEmbedding(String),

    #[error("labels contain a single class; AUC needs at least one positive and one negative")]
    DegenerateLabels,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the data or the
    /// configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFiniteLoss(_))
    }

    pub(crate) fn corrupt(kind: &'static str, message: impl Into<String>) -> Self {
        Error::CorruptFile {
            kind,
            message: message.into(),
        }
    }
}

/// Training state captured when a loss turns non-finite.
#[derive(Debug, Clone, PartialEq)]
pub struct NonFiniteDump {
    pub epoch: usize,
    pub step: usize,
    pub learning_rate: f64,
    /// Absent for validation and probe losses.
    pub word: Option<usize>,
    pub record_id: String,
    pub loss: f64,
    pub feature_norm: f64,
    pub max_abs_word_weight: f64,
    pub max_abs_extractor_param: f64,
}

fn num(v: f64) -> String {
    if v == 0.0 || !v.is_finite() || (1e-4..1e6).contains(&v.abs()) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

impl fmt::Display for NonFiniteDump {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "  epoch:                {}", self.epoch)?;
        writeln!(f, "  step:                 {}", self.step)?;
        writeln!(f, "  learning rate:        {}", num(self.learning_rate))?;
        if let Some(w) = self.word {
            writeln!(f, "  positive word:        {w}")?;
        }
        writeln!(f, "  record:               {}", self.record_id)?;
        writeln!(f, "  loss:                 {}", num(self.loss))?;
        writeln!(f, "  |z|:                  {}", num(self.feature_norm))?;
        writeln!(f, "  max |W|:              {}", num(self.max_abs_word_weight))?;
        write!(f, "  max |theta|:          {}", num(self.max_abs_extractor_param))
    }
}
