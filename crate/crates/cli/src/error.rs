use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("missing files: {}", .0.join(", "))]
    Missing(Vec<String>),

    #[error(transparent)]
    Core(#[from] clipnet::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{failed} of {total} runs failed")]
    Runs {
        failed: usize,
        total: usize,
        /// A stability invariant broke in at least one run.
        breach: bool,
    },
}

impl CliError {
    /// Process exit status: 2 for configuration problems, 3 for invariant
    /// breaches, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(clipnet::Error::InvariantBreach(_)) => 3,
            CliError::Core(clipnet::Error::Config(_)) => 2,
            CliError::Runs { breach: true, .. } => 3,
            _ => 1,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(
            CliError::Core(clipnet::Error::Config("x".into())).exit_code(),
            2
        );
        assert_eq!(
            CliError::Core(clipnet::Error::InvariantBreach("x".into())).exit_code(),
            3
        );
        assert_eq!(
            CliError::Runs {
                failed: 1,
                total: 2,
                breach: true
            }
            .exit_code(),
            3
        );
        assert_eq!(
            CliError::Runs {
                failed: 1,
                total: 2,
                breach: false
            }
            .exit_code(),
            1
        );
        assert_eq!(CliError::Missing(vec!["a".into()]).exit_code(), 1);
    }
}
