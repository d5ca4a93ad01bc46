use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: line {line}: {message}")]
    Line { path: PathBuf, line: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] reif_core::Error),

    /// A failure whose exit code was decided elsewhere.
    #[error("{message}")]
    Failed { kind: ExitKind, message: String },
}

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Other = 1,
    Config = 2,
    Data = 3,
    Divergence = 4,
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn kind(&self) -> ExitKind {
        use reif_core::Error as E;
        match self {
            Error::Config(_) => ExitKind::Config,
            Error::Line { .. } | Error::Data(_) => ExitKind::Data,
            Error::Io { .. } => ExitKind::Other,
            Error::Failed { kind, .. } => *kind,
            Error::Core(e) => match e {
                E::Diverged { .. } | E::LissaDiverged { .. } | E::Singular { .. } => ExitKind::Divergence,
                E::Contract(_) | E::InfeasibleSpec(_) | E::CapExceeded { .. } | E::StaleInverseHvp { .. } => {
                    ExitKind::Config
                }
                _ => ExitKind::Data,
            },
        }
    }
}
