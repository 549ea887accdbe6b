use std::fmt;
use std::path::Path;
use std::process::ExitCode;

/// Failure of a command, split by exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or malformed files, missing artifacts.
    Input(String),
    /// The numbers went wrong (zero likelihood, non-finite values).
    Numerical(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Input(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Input(_) => ExitCode::from(2),
            CliError::Numerical(_) => ExitCode::from(3),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<panelhmm::Error> for CliError {
    fn from(e: panelhmm::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

/// Attaches a file name to library errors raised while reading it.
pub fn in_file<T>(path: &Path, r: panelhmm::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        panelhmm::Error::Io { .. } => CliError::from(e),
        e => match CliError::from(e) {
            CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
            other => other,
        },
    })
}
