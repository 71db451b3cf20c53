use std::fmt;

use hypervol::Error;

/// Failures surfaced by the CLI, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable, malformed or invalid configuration.
    Config(String),
    /// Library error; classified by [`CliError::exit_code`].
    Engine(Error),
    /// Artifact could not be written.
    Io(String),
}

impl CliError {
    /// 1 for configuration and validation problems, 2 for everything that
    /// went wrong while computing or persisting results.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Engine(e) => {
                if is_validation(e) {
                    1
                } else {
                    2
                }
            }
            CliError::Io(_) => 2,
        }
    }
}

fn is_validation(e: &Error) -> bool {
    match e {
        Error::Invalid { .. } | Error::OutsideGrid { .. } | Error::Cfl { .. } => true,
        Error::AtDelta { source, .. } => is_validation(source),
        _ => false,
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Engine(e) if is_validation(e) => write!(f, "configuration error: {e}"),
            CliError::Engine(e) => write!(f, "numerical failure: {e}"),
            CliError::Io(m) => write!(f, "output error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Engine(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes() {
        let inv = Error::Invalid { field: "x", reason: "r".into() };
        assert_eq!(CliError::Engine(inv.clone()).exit_code(), 1);
        assert_eq!(CliError::Engine(Error::AtDelta { delta: 0.1, source: Box::new(inv) }).exit_code(), 1);
        assert_eq!(CliError::Engine(Error::NonFinite { time_index: 0, i: 0, j: 0 }).exit_code(), 2);
        assert_eq!(CliError::Engine(Error::TooFewRows { usable: 1 }).exit_code(), 2);
        assert_eq!(CliError::Config("x".into()).exit_code(), 1);
    }
}
