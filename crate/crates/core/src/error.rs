use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Variants map one-to-one onto the failure modes of the individual
/// operations so that callers (the CLI in particular) can route them to
/// distinct exit codes.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown name `{name}` at offset {offset}")]
    UnknownName { name: String, offset: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid symplectic form: {0}")]
    InvalidForm(String),

    #[error("hamiltonian is not declared separable; leapfrog is unavailable")]
    NotSeparable,

    #[error("invalid phase point: {0}")]
    InvalidPoint(String),

    #[error("post-impact state re-enters the guard (direction {direction:e} < 0)")]
    ReCrossing { direction: f64 },

    #[error("zeno behaviour suspected at t = {time}: {reason}")]
    ZenoSuspected { time: f64, reason: String },

    #[error("cocycle is not constant: spread {spread:e} exceeds tolerance {tol:e}")]
    NotConstant { spread: f64, tol: f64 },

    #[error("group action does not preserve the guard: |g(Phi_g(x))| = {residual:e}")]
    TangencyViolation { residual: f64 },

    #[error("no admissible guard points found on level set {mu:?}")]
    EmptyLevelSet { mu: Vec<f64> },

    #[error("{0} is not a regular value")]
    NotRegular(String),

    #[error("selected free coordinates do not determine the level set: {0}")]
    SingularSelection(String),

    #[error("isotropy subgroup has dimension {dim}; only trivial isotropy is supported")]
    UnsupportedIsotropy { dim: usize },

    #[error("reduced symplectic form is degenerate (rank {rank} < {dim})")]
    DegenerateReducedForm { rank: usize, dim: usize },

    #[error("impact image left the predicted level: |J(Delta(x)) - mu_plus| = {residual:e}")]
    LevelMismatch { residual: f64 },

    #[error("flow structure mismatch: {0}")]
    StructureMismatch(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
