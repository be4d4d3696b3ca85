use thiserror::Error;

/// Errors raised by geometry construction, field solves, optimization and
/// report I/O.
#[derive(Debug, Error)]
pub enum MemsError {
    #[error("deflection is not clamped at x = {x}: value {value}, slope {slope}")]
    NotClamped { x: f64, value: f64, slope: f64 },

    #[error("deflection value {value} at x = {x} lies below the obstacle -H = {floor}")]
    BelowObstacle { x: f64, value: f64, floor: f64 },

    #[error("point {coord} = {value} lies outside the domain [{lo}, {hi}]")]
    OutOfDomain {
        coord: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("gap {min_gap} at x = {x} is below the solvable floor {required}")]
    TouchdownGeometry { x: f64, min_gap: f64, required: f64 },

    #[error("linear system is not positive definite (pivot {pivot} at row {row})")]
    SingularSystem { row: usize, pivot: f64 },

    #[error("field model {found} does not match the requested {expected}")]
    ModelMismatch {
        expected: &'static str,
        found: String,
    },

    #[error("plate trace unavailable: {0}")]
    TraceUnavailable(String),

    #[error("w-range [{lo}, {hi}] touches or crosses the obstacle -H = {floor}")]
    DegenerateRange { lo: f64, hi: f64, floor: f64 },

    #[error("invalid samples: {0}")]
    InvalidSamples(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("iteration {iteration}: {source}")]
    Iterate {
        iteration: usize,
        #[source]
        source: Box<MemsError>,
    },

    #[error("delta = {delta}: {source}")]
    AtDelta {
        delta: f64,
        #[source]
        source: Box<MemsError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MemsError {
    /// True for errors caused by bad input (configuration or deflection
    /// files) rather than by the numerics.
    pub fn is_config_error(&self) -> bool {
        match self {
            MemsError::Config(_)
            | MemsError::Json(_)
            | MemsError::InvalidSamples(_)
            | MemsError::NotClamped { .. }
            | MemsError::BelowObstacle { .. }
            | MemsError::DegenerateRange { .. } => true,
            MemsError::Iterate { source, .. } | MemsError::AtDelta { source, .. } => {
                source.is_config_error()
            }
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, MemsError>;
