use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),

    #[error(transparent)]
    Core(#[from] tandem_core::Error),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 0 ok, 1 bad input, 2 degenerate spec, 3 numerical or run failure.
    pub fn exit_code(&self) -> i32 {
        use tandem_core::Error as E;
        match self {
            CliError::Core(E::Degenerate) => 2,
            CliError::Core(
                E::SolverFailure { .. }
                | E::GridTooLarge { .. }
                | E::Numerical(_)
                | E::InternalInconsistency(_)
                | E::EventCapExceeded { .. }
                | E::Timeout { .. },
            ) => 3,
            _ => 1,
        }
    }

    /// The reader went away (e.g. `| head`); not worth reporting.
    pub fn is_broken_pipe(&self) -> bool {
        let io = match self {
            CliError::Io(e) => Some(e),
            CliError::Csv(e) => match e.kind() {
                csv::ErrorKind::Io(e) => Some(e),
                _ => None,
            },
            _ => None,
        };
        io.is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
    }
}
