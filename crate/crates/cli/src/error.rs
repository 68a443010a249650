use std::fmt;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    /// Invalid or unreadable configuration.
    Config(String),
    /// Unreadable, mismatched or unwritable model or output files.
    Artifact(String),
    /// Training or evaluation failed at run time.
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Artifact(_) => ExitCode::from(3),
            CliError::Run(_) => ExitCode::from(1),
        }
    }

    pub fn artifact(what: impl fmt::Display, e: impl fmt::Display) -> Self {
        CliError::Artifact(format!("{what}: {e}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Artifact(m) => write!(f, "artifact error: {m}"),
            CliError::Run(m) => write!(f, "run failed: {m}"),
        }
    }
}
