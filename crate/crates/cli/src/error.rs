use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] rdlab::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("scenario file: {0}")]
    Config(#[from] toml::de::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("unknown scenario '{name}' (catalog: {available})")]
    UnknownScenario { name: String, available: String },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("no data of kind '{kind}' in this report (available: {available})")]
    MissingKind { kind: String, available: String },

    #[error("unknown data kind '{kind}' (known: {known})")]
    UnknownKind { kind: String, known: String },

    #[error("thread pool: {0}")]
    ThreadPool(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
