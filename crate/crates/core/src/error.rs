use thiserror::Error;

/// Crate-wide error type. Variants are grouped by the CLI exit code they map to:
/// validation failures (2), numerical failures (3), insufficient support (4).
#[derive(Debug, Error)]
pub enum Error {
    // -- model validation --
    #[error("law is not critical: E[log A] = {mean_log_a}")]
    NonCritical { mean_log_a: f64 },
    #[error("degenerate law: {0}")]
    Degenerate(String),
    #[error("moment condition failed: {0}")]
    MomentFailure(String),
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    // -- walk / enumeration --
    #[error("duality enumeration depth {depth} exceeds limit {max}")]
    DepthOverflow { depth: usize, max: usize },
    #[error("ladder epoch not reached within n_max = {n_max}")]
    Truncated { n_max: u64 },

    // -- tail statistics --
    #[error("insufficient support: {0}")]
    InsufficientSupport(String),
    #[error("half-space diagnostics requested for a configuration without a positive invariant half-space")]
    ConfigNotCoveredByG,

    // -- potential kernel --
    #[error("function is not in the admissible transform class: {0}")]
    NotInClass(String),
    #[error("transform does not vanish at a lattice zero of 1 - mu_hat (|psi_hat({theta})| = {value:e})")]
    LatticeZeroMismatch { theta: f64, value: f64 },
    #[error("adaptive quadrature exceeded its panel budget (reached abs err {err:e}, tol {tol:e})")]
    QuadratureFailure { err: f64, tol: f64 },
    #[error("lambda extrapolation diverged: {0}")]
    ExtrapolationDivergence(String),
    #[error("operation unsupported for lattice multiplier law: {0}")]
    UnsupportedLattice(String),

    // -- cross validation --
    #[error("no plateau: fitted drift {drift:e} exceeds threshold {threshold:e}")]
    NoPlateau { drift: f64, threshold: f64 },
    #[error("inconsistent tail-constant estimates: {0}")]
    InconsistentEstimates(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad cloud file: {0}")]
    BadCloudFile(String),
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// CLI exit code for this error.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            NonCritical { .. } | Degenerate(_) | MomentFailure(_) | InvalidSpec(_)
            | Config(_) => 2,
            QuadratureFailure { .. } | ExtrapolationDivergence(_) | NotInClass(_)
            | LatticeZeroMismatch { .. } | UnsupportedLattice(_) | NoPlateau { .. }
            | InconsistentEstimates(_) | DepthOverflow { .. } | Truncated { .. } => 3,
            InsufficientSupport(_) | ConfigNotCoveredByG => 4,
            Io(_) | BadCloudFile(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
