use thiserror::Error;

/// Failures raised anywhere in the library.
///
/// The CLI maps these onto exit codes: configuration problems exit with 2,
/// numerical problems with 3 (see [`Error::exit_code`]).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Newton iteration ran out of iterations before the residual met the tolerance.
    #[error("newton iteration did not converge after {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    /// The derivative fell below 1e-14 at an iterate; the branch is not univalent there.
    #[error("derivative vanished at z = {re} + {im}i")]
    DerivativeVanished { re: f64, im: f64 },
    /// A sampled value was NaN or infinite.
    #[error("non-finite value encountered: {0}")]
    NonFiniteValue(String),
    /// Evaluation landed within 1e-13 of a pole.
    #[error("evaluation point is within 1e-13 of a pole")]
    PoleHit,
    /// The family carries metadata only.
    #[error("operation unsupported for family {0}")]
    Unsupported(String),
    /// A branch domain meets the singular-value stand-off, or the branch index is out of range.
    #[error("invalid branch domain: {0}")]
    BranchDomainInvalid(String),
    /// A closed-form formula was called outside its domain.
    #[error("domain error: {0}")]
    DomainError(String),
    /// Too few poles for a regression.
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    /// Word enumeration would exceed the configured cap.
    #[error("word budget exceeded: {words} words > cap {cap}")]
    WordBudgetExceeded { words: u128, cap: u64 },
    /// The pressure has the same sign at both ends of the bracket.
    #[error("pressure does not change sign on [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },
    /// A symbolic address does not fit the system.
    #[error("invalid address: {0}")]
    InvalidAddress(String),
    /// A construction's constant ledger cannot be satisfied.
    #[error("infeasible configuration: {0}")]
    ConfigInfeasible(String),
    /// A schedule threshold could not be reached within the pole budget.
    #[error("schedule infeasible: {reason} (achieved partial sum {achieved:e}, needed {needed:e})")]
    ScheduleInfeasible { reason: String, achieved: f64, needed: f64 },
    /// No finite tail radius exists at this exponent.
    #[error("exponent {t} is not supercritical: {reason}")]
    NotSupercritical { t: f64, reason: String },
    /// Malformed user configuration.
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// Process exit status used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigInfeasible(_)
            | Error::ScheduleInfeasible { .. }
            | Error::NotSupercritical { .. }
            | Error::Config(_)
            | Error::BranchDomainInvalid(_)
            | Error::Unsupported(_)
            | Error::DomainError(_)
            | Error::NoSignChange { .. }
            | Error::InvalidAddress(_) => 2,
            _ => 3,
        }
    }

    /// Stable machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NoConvergence { .. } => "NoConvergence",
            Error::DerivativeVanished { .. } => "DerivativeVanished",
            Error::NonFiniteValue(_) => "NonFiniteValue",
            Error::PoleHit => "PoleHit",
            Error::Unsupported(_) => "Unsupported",
            Error::BranchDomainInvalid(_) => "BranchDomainInvalid",
            Error::DomainError(_) => "DomainError",
            Error::InsufficientData(_) => "InsufficientData",
            Error::WordBudgetExceeded { .. } => "WordBudgetExceeded",
            Error::NoSignChange { .. } => "NoSignChange",
            Error::InvalidAddress(_) => "InvalidAddress",
            Error::ConfigInfeasible(_) => "ConfigInfeasible",
            Error::ScheduleInfeasible { .. } => "ScheduleInfeasible",
            Error::NotSupercritical { .. } => "NotSupercritical",
            Error::Config(_) => "Config",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
