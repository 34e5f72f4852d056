use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("degenerate cell {0}")]
    DegenerateCell(usize),

    #[error("liner panel {panel} does not coincide with a mesh plane")]
    NonConformingLiner { panel: usize },

    #[error("electrode {electrode}: {residual:.6e} m of its length lies outside every bulk cell")]
    UnmappedElectrode { electrode: usize, residual: f64 },

    #[error("singular interaction region at vertex {0}")]
    SingularInteractionRegion(usize),

    #[error("unknown boundary tag {0}")]
    UnknownBoundaryTag(i32),

    #[error(
        "Peaceman denominator ln(r_e/r) + S = {denominator:.6e} is not positive \
         (r_e = {equivalent_radius:.6e} m, r = {radius:.6e} m)"
    )]
    NonpositiveDenominator { denominator: f64, equivalent_radius: f64, radius: f64 },

    #[error("liner cell {0} has no bulk face on one of its sides")]
    BrokenMortar(usize),

    #[error("assembly mismatch: {0}")]
    AssemblyMismatch(String),

    #[error("incompatible source: rhs sums to {sum:.6e}, tolerance {tolerance:.6e}")]
    IncompatibleSource { sum: f64, tolerance: f64 },

    #[error("linear solve failed: {reason} (relative residual {residual:.3e})")]
    SolveFailure { reason: String, residual: f64 },

    #[error("invalid survey: {0}")]
    InvalidSurvey(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse { line, message: message.into() }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: message.into() }
    }
}

/// Non-fatal conditions collected while building grids and operators.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// A face whose half-transmissibility is not positive (cell center on the wrong side).
    IllConditionedFace(usize),
    /// A liner panel that selected no bulk face (for instance because holes cover it).
    EmptyLiner { panel: usize },
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Warning::IllConditionedFace(face) => {
                write!(f, "face {face} has a non-positive half-transmissibility")
            }
            Warning::EmptyLiner { panel } => write!(f, "liner panel {panel} selected no faces"),
        }
    }
}
