use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} replication(s) hit the iteration cap")]
    IterationCap(usize),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::IterationCap(_) => 1,
            CliError::Invalid(_) => 2,
            CliError::Io { .. } => 3,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => CliError::Io {
                path: "csv stream".into(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => CliError::Invalid(format!("csv: {e}")),
        }
    }
}
