use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("cannot read input {0}")]
    Input(String),
    #[error("cannot write output {0}")]
    Output(String),
    #[error(transparent)]
    Core(#[from] hemoflow::Error),
}

pub type CliResult<T> = Result<T, CliError>;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use hemoflow::Error as E;
        match self {
            CliError::Config(_) => EXIT_USAGE,
            CliError::Input(_) | CliError::Output(_) => EXIT_FORMAT,
            CliError::Core(E::Format { .. } | E::Io(_) | E::Shape(_)) => EXIT_FORMAT,
            CliError::Core(E::Numerical(_)) => EXIT_NUMERICAL,
            CliError::Core(_) => EXIT_USAGE,
        }
    }
}
