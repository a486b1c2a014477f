use thiserror::Error;

/// Errors raised by the quench and ensemble machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// The pre-quench ground state is not unique at the requested filling.
    #[error("Fermi level is degenerate: levels {levels:?} have energies {energies:?}")]
    FermiDegeneracy { levels: Vec<usize>, energies: Vec<f64> },

    #[error("eigensolver failure: {0}")]
    Eigensolver(String),

    #[error("configuration budget exceeded: {required} configurations > budget {budget} (use streaming mode)")]
    BudgetExceeded { required: u128, budget: u64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("support mismatch: {0}")]
    SupportMismatch(String),

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("fit did not converge after {iterations} iterations (gradient max-norm {gradient_norm:e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
