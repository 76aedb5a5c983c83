use std::fmt;

/// Process exit codes.
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_DIVERGENCE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_GRADCHECK: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Validation(Vec<String>),
    Core(sigsde::Error),
    Io { path: String, source: std::io::Error },
    GradcheckFailed(Vec<String>),
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Core(e) if e.is_divergence() => EXIT_DIVERGENCE,
            CliError::Core(sigsde::Error::Io(_) | sigsde::Error::Parse { .. }) => EXIT_IO,
            CliError::Core(_) => EXIT_VALIDATION,
            CliError::Io { .. } => EXIT_IO,
            CliError::GradcheckFailed(_) => EXIT_GRADCHECK,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(errs) => {
                writeln!(f, "invalid configuration:")?;
                for e in errs {
                    writeln!(f, "  {e}")?;
                }
                Ok(())
            }
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{path}: {source}"),
            CliError::GradcheckFailed(names) => write!(f, "gradient checks failed: {}", names.join(", ")),
        }
    }
}

impl From<sigsde::Error> for CliError {
    fn from(e: sigsde::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
