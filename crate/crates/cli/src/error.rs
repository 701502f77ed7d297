use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad command line; also carries help and version output.
    #[error("{0}")]
    Usage(#[from] clap::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(mimadv::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for usage and configuration problems, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(e) => e.exit_code().clamp(0, 255) as u8,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io { .. } => 1,
        }
    }

    pub(crate) fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<mimadv::Error> for CliError {
    fn from(e: mimadv::Error) -> Self {
        use mimadv::Error::*;
        match e {
            // parameters the library rejects but validation let through
            InvalidDegree(_) | InvalidQuadrature(_) | InvalidMesh(_) | InvalidArgument(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Numerical(other),
        }
    }
}
