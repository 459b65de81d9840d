use std::fmt;

/// Errors grouped by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad command line (exit 1).
    Usage(String),
    /// Invalid or incomplete configuration, inputs or output location (exit 2).
    Config(String),
    /// A numerical routine failed (exit 3).
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Maps a core error raised while handling config section `path`.
pub fn core_error(path: &str, e: fluxlab_core::Error) -> CliError {
    use fluxlab_core::Error as E;
    match e {
        E::InvalidParameter { .. } | E::IndexOutOfRange { .. } => {
            CliError::Config(format!("`{path}`: {e}"))
        }
        E::DegenerateData(_) => CliError::Config(format!("`{path}`: {e}")),
        _ => CliError::Numerical(format!("{path}: {e}")),
    }
}
