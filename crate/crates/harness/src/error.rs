use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config file not found: {}", .0.display())]
    MissingConfig(PathBuf),

    #[error("{origin}: {message}")]
    ConfigSyntax { origin: String, message: String },

    #[error("bad grid spec {spec:?}: {reason}")]
    Grid { spec: String, reason: String },

    #[error("metrics file {}: {reason}", path.display())]
    Metrics { path: PathBuf, reason: String },

    #[error(transparent)]
    Core(#[from] rahfl::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("cannot serialize config: {0}")]
    TomlSer(#[from] toml::ser::Error),
}
