use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on caller-supplied data was violated.
    #[error("input error: {0}")]
    Input(String),

    /// An external command (frame extractor, OCR engine) failed.
    #[error("{tool} failed ({status}): {output}")]
    ExternalTool {
        tool: String,
        status: String,
        output: String,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    /// A pipeline stage was run before the stage that produces its inputs.
    #[error("missing output of stage `{stage}` at {path}; run `chatscope {stage}` first")]
    MissingStage { stage: String, path: PathBuf },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("unparseable classifier output: {0}")]
    Parse(String),

    #[error("all sampling pools are exhausted")]
    Exhausted,

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
