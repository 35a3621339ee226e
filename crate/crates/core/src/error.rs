//! Crate-wide error type.
//!
//! Variants are grouped by the pipeline stage that raises them so callers
//! (notably the CLI) can map them onto stable exit codes: configuration
//! problems, data problems, and numerical failures.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // --- configuration / usage ---
    #[error("role configuration invalid: {0}")]
    InvalidRoleConfig(String),
    #[error("missing role for requested analysis: {0}")]
    MissingRole(String),
    #[error("outcome bounds invalid: K0={k0} > K1={k1}")]
    InvalidBounds { k0: f64, k1: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    // --- data ---
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("column '{column}' required for trial '{trial}' (role {role}) is absent")]
    MissingRequiredColumn {
        column: String,
        trial: String,
        role: String,
    },
    #[error("declared role '{0}' has no records")]
    EmptyRole(String),
    #[error("trial label '{0}' does not map to any declared role")]
    UnknownLabel(String),
    #[error("trial '{trial}' has no rows with z={arm}")]
    MissingArm { trial: String, arm: u8 },
    #[error("participation model needs at least two labels, got {0}")]
    SingleLabel(String),
    #[error("covariate vector has length {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    // --- numerical ---
    #[error("glm fit did not converge within {max_iterations} iterations (score norm {score_norm:.3e})")]
    NoConvergence {
        max_iterations: usize,
        score_norm: f64,
    },
    #[error("conditional treatment-received contrast below floor: |{0:.3e}| < epsilon_d")]
    DenominatorNearZero(f64),
    #[error("every target row fell below the denominator floor")]
    AllStrataDegenerate,
    #[error("estimating equation system is singular")]
    SingularSystem,
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("probabilities do not form a valid distribution: {0}")]
    InvalidDistribution(String),
    #[error("bootstrap failures exceeded threshold: {failed} of {total} replicates")]
    TooManyFailures { failed: usize, total: usize },
    #[error("influence-function variance is degenerate (all contributions zero)")]
    DegenerateVariance,
    #[error("fold {fold} leaves cell (trial '{trial}', arm {arm}) empty")]
    EmptyCellInFold {
        fold: usize,
        trial: String,
        arm: String,
    },
    #[error("need at least 2 replicates to summarize, got {0}")]
    InsufficientReplicates(usize),
}

impl Error {
    /// Stable coarse classification used by the CLI for exit codes.
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            InvalidRoleConfig(_) | MissingRole(_) | InvalidBounds { .. } | InvalidConfig(_) => {
                ErrorClass::Config
            }
            MalformedRow { .. }
            | MissingRequiredColumn { .. }
            | EmptyRole(_)
            | UnknownLabel(_)
            | MissingArm { .. }
            | SingleLabel(_)
            | DimensionMismatch { .. }
            | Io { .. }
            | Csv(_)
            | Json(_) => ErrorClass::Data,
            NoConvergence { .. }
            | DenominatorNearZero(_)
            | AllStrataDegenerate
            | SingularSystem
            | NonFinite(_)
            | InvalidDistribution(_)
            | TooManyFailures { .. }
            | DegenerateVariance
            | EmptyCellInFold { .. }
            | InsufficientReplicates(_) => ErrorClass::Numerical,
        }
    }

    /// Short machine-readable code embedded in error reports.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            InvalidRoleConfig(_) => "invalid_role_config",
            MissingRole(_) => "missing_role",
            InvalidBounds { .. } => "invalid_bounds",
            InvalidConfig(_) => "invalid_config",
            MalformedRow { .. } => "malformed_row",
            MissingRequiredColumn { .. } => "missing_required_column",
            EmptyRole(_) => "empty_role",
            UnknownLabel(_) => "unknown_label",
            MissingArm { .. } => "missing_arm",
            SingleLabel(_) => "single_label",
            DimensionMismatch { .. } => "dimension_mismatch",
            Io { .. } => "io",
            Csv(_) => "csv",
            Json(_) => "json",
            NoConvergence { .. } => "no_convergence",
            DenominatorNearZero(_) => "denominator_near_zero",
            AllStrataDegenerate => "all_strata_degenerate",
            SingularSystem => "singular_system",
            NonFinite(_) => "non_finite",
            InvalidDistribution(_) => "invalid_distribution",
            TooManyFailures { .. } => "too_many_failures",
            DegenerateVariance => "degenerate_variance",
            EmptyCellInFold { .. } => "empty_cell_in_fold",
            InsufficientReplicates(_) => "insufficient_replicates",
        }
    }
}

/// Coarse error classes; the CLI maps these to exit codes 2 / 3 / 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}
