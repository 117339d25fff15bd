//! Error types shared across the crate.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch in {context}")]
    Dimension { context: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid model spec at layer {layer}: {message}")]
    Spec { layer: usize, message: String },

    #[error("invalid poison plan: {0}")]
    Plan(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("truncated data: {0}")]
    Length(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dimension(context: impl Into<String>) -> Self {
        Error::Dimension { context: context.into() }
    }

    /// Wraps an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage { stage: stage.into(), source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
