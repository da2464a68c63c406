use thiserror::Error;

/// Errors produced anywhere in the identification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid transmitter profile `{radio_id}` tx{tx_index}: {reason}")]
    InvalidProfile {
        radio_id: String,
        tx_index: u32,
        reason: String,
    },

    #[error("duplicate transmitter ({radio_id}, tx{tx_index})")]
    DuplicateTransmitter { radio_id: String, tx_index: u32 },

    #[error("no sample crosses the onset threshold {tau}")]
    NoOnset { tau: f64 },

    #[error("packet too short: need {needed} samples, have {available}")]
    TooShort { needed: usize, available: usize },

    #[error("normalization statistic is zero")]
    ZeroCorpus,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty patch set")]
    EmptyPatchSet,

    #[error("class {0} has no training samples")]
    MissingClass(u32),

    #[error("model has not been trained")]
    UntrainedModel,

    #[error("linear solve failed: {0}")]
    SolveFailure(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short identifier used in machine-readable CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::InvalidProfile { .. } => "InvalidProfile",
            Error::DuplicateTransmitter { .. } => "DuplicateTransmitter",
            Error::NoOnset { .. } => "NoOnset",
            Error::TooShort { .. } => "TooShort",
            Error::ZeroCorpus => "ZeroCorpus",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::EmptyPatchSet => "EmptyPatchSet",
            Error::MissingClass(_) => "MissingClass",
            Error::UntrainedModel => "UntrainedModel",
            Error::SolveFailure(_) => "SolveFailure",
            Error::Format(_) => "Format",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
