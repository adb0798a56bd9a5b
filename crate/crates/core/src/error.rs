use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("input file not found: {0}")]
    MissingInput(PathBuf),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed row {row}: {message}")]
    MalformedRow { row: u64, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no coefficients for category {category}, pollutant {pollutant}")]
    MissingCoefficients { category: String, pollutant: String },

    #[error("fleet/EPA join produced no vehicle types")]
    EmptyJoin,

    #[error("calibration vehicle {0} not present in the EPA rate table")]
    MissingCalibrationVehicle(String),

    #[error("trip {0} has no vehicle type assignment")]
    MissingAssignment(String),

    #[error("unknown trip {0}")]
    UnknownTrip(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

impl Error {
    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MissingInput(_) => "missing_input",
            Error::Csv(_) => "csv",
            Error::MalformedRow { .. } => "malformed_row",
            Error::InvalidInput(_) => "invalid_input",
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
            Error::MissingCoefficients { .. } => "missing_coefficients",
            Error::EmptyJoin => "empty_join",
            Error::MissingCalibrationVehicle(_) => "missing_calibration_vehicle",
            Error::MissingAssignment(_) => "missing_assignment",
            Error::UnknownTrip(_) => "unknown_trip",
            Error::Json(_) => "json",
        }
    }

    /// Process exit status: 2 for absent inputs, 3 for inputs that fail
    /// validation, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingInput(_) => 2,
            Error::Io { .. } | Error::Json(_) => 1,
            _ => 3,
        }
    }
}
