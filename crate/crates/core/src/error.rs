use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the laboratory can report.
///
/// Variants carry enough context to name the module that raised them, see
/// [`Error::module`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain: {0}")]
    InvalidSpec(String),
    #[error("domain: no active grid nodes")]
    EmptyDomain,
    #[error("domain: hole of size {eps} is not resolved by spacing {h} (need h < eps/4)")]
    UnresolvedHole { eps: f64, h: f64 },
    #[error("domain: holes {first} and {second} overlap or touch")]
    OverlappingHoles { first: usize, second: usize },
    #[error("domain: hole {index} is not strictly inside the outer domain")]
    HoleOutsideDomain { index: usize },
    #[error("domain: resolution {0} is below the minimum of 8")]
    ResolutionTooLow(f64),

    #[error("{context}: dimension mismatch (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{context}: no convergence after {iterations} iterations (residual {residual:e})")]
    MaxIterations {
        context: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("{context}: non-finite value encountered")]
    NotFinite { context: &'static str },

    #[error("eigen: active set has {components} connected components")]
    NotConnected { components: usize },
    #[error("eigen: start vector orthogonal to the ground state")]
    DegenerateStart,
    #[error("eigen: resolutions are not a factor-2 refinement of the same domain")]
    ResolutionMismatch,

    #[error("capacity: eps = {0} outside (0, 1)")]
    InvalidEps(f64),

    #[error("stability: margin {0} is not positive")]
    NoPositiveMargin(f64),
    #[error("stability: eigenfunction vanishes at every hole center")]
    ZeroShiftDivisor,

    #[error("rng: time step {0} is not positive")]
    NonPositiveDt(f64),

    #[error("spde: {0}")]
    InvalidConfig(String),
    #[error("spde: squared norm underflowed at t = {t}")]
    DegenerateNorm { t: f64 },

    #[error("noise: {0}")]
    InvalidNoise(String),

    #[error("cli: {0}")]
    Usage(String),
    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Name of the module the error originates from.
    pub fn module(&self) -> &'static str {
        use Error::*;
        match self {
            InvalidSpec(_)
            | EmptyDomain
            | UnresolvedHole { .. }
            | OverlappingHoles { .. }
            | HoleOutsideDomain { .. }
            | ResolutionTooLow(_) => "domain",
            DimensionMismatch { context, .. }
            | MaxIterations { context, .. }
            | NotFinite { context } => context,
            NotConnected { .. } | DegenerateStart | ResolutionMismatch => "eigen",
            InvalidEps(_) => "capacity",
            NoPositiveMargin(_) | ZeroShiftDivisor => "stability",
            NonPositiveDt(_) => "rng",
            InvalidConfig(_) | DegenerateNorm { .. } => "spde",
            InvalidNoise(_) => "noise",
            Usage(_) => "cli",
            Io(_) => "io",
        }
    }

    /// Numerical failures map to exit code 2, everything else is a usage error.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::MaxIterations { .. }
                | Error::NotFinite { .. }
                | Error::DegenerateStart
                | Error::DegenerateNorm { .. }
                | Error::NoPositiveMargin(_)
                | Error::ZeroShiftDivisor
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::InvalidSpec(format!("json: {e}"))
    }
}
