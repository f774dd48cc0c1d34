//! Crate-wide error type.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("client dataset is empty")]
    EmptyClient,

    #[error("parse error in {file} line {line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("format error in {file} line {line}: {msg}")]
    Format {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("cannot partition {rows} rows across {clients} clients")]
    TooManyClients { clients: usize, rows: usize },

    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("fixed-point encoding out of range at parameter {index}: {value}")]
    EncodingRange { index: usize, value: f64 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("client {client_id}: {source}")]
    Client {
        client_id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Tag an error with the client it came from.
    pub fn for_client(self, client_id: usize) -> Error {
        Error::Client {
            client_id,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
