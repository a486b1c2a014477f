use serde::Serialize;

use cgge_core::Error as CoreError;

use crate::report::SCHEMA_VERSION;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => 1,
            CliError::Core(e) => match e {
                CoreError::NonConvergence { .. } | CoreError::NoSolution(_) | CoreError::Eigensolver(_) => 2,
                CoreError::BudgetExceeded { .. } => 3,
                _ => 1,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
            CliError::Core(e) => match e {
                CoreError::InvalidParams(_) => "invalid_params",
                CoreError::FermiDegeneracy { .. } => "fermi_degeneracy",
                CoreError::Eigensolver(_) => "eigensolver",
                CoreError::BudgetExceeded { .. } => "budget_exceeded",
                CoreError::Dimension(_) => "dimension",
                CoreError::SupportMismatch(_) => "support_mismatch",
                CoreError::NoSolution(_) => "no_solution",
                CoreError::NonConvergence { .. } => "non_convergence",
            },
        }
    }

    /// Machine-readable error object.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: &'a str,
            message: String,
            exit_code: i32,
        }
        #[derive(Serialize)]
        struct Wrapper<'a> {
            schema_version: u32,
            error: Body<'a>,
        }
        let w = Wrapper {
            schema_version: SCHEMA_VERSION,
            error: Body { kind: self.kind(), message: self.to_string(), exit_code: self.exit_code() },
        };
        serde_json::to_string(&w).expect("error object serializes")
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
