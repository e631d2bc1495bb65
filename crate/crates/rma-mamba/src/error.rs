use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {msg}", path.display())]
    Image { path: PathBuf, msg: String },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("config line {line}: {msg}")]
    ConfigSyntax { line: usize, msg: String },
    #[error("checkpoint checksum mismatch (file truncated or corrupted)")]
    Checksum,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint is missing parameter `{0}`")]
    MissingParameter(String),
    #[error("checkpoint config does not match: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Core(#[from] rma_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
