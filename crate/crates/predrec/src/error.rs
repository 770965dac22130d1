use std::path::PathBuf;

use serde::Serialize;

/// Errors surfaced by the command line tool.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("column `{0}` not found in the input header")]
    MissingColumn(String),

    /// `row` counts data rows from 1 (the header is row 0).
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Parse { row: usize, column: String, value: String },

    #[error("{0}")]
    Empty(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{}", describe_core(.0))]
    Core(#[from] predrec_core::Error),
}

/// Core errors name observations by 0-based position; users see 1-based rows.
fn describe_core(e: &predrec_core::Error) -> String {
    use predrec_core::Error as E;
    match e {
        E::BadObservation { index, message } => format!("row {}: {message}", index + 1),
        E::ZeroPredictive { index } => format!("row {}: zero predictive density", index + 1),
        E::ZeroMixture { index } => format!("row {}: zero mixture density", index + 1),
        other => other.to_string(),
    }
}

/// Machine-readable error record written to stderr.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRecord {
    pub kind: &'static str,
    pub message: String,
    pub exit_code: u8,
    /// 1-based data row, when the failure is tied to one input row.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        use predrec_core::Error as E;
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::MissingColumn(_) => "config",
            CliError::Parse { .. } | CliError::Empty(_) | CliError::Csv(_) | CliError::Json(_) => "parse",
            CliError::Core(e) => match e {
                E::Parameter(_) | E::Schedule(_) | E::InvalidGrid(_) => "config",
                E::Domain(_) | E::BadObservation { .. } | E::Range(_) | E::Data(_) => "data",
                _ => "numerical",
            },
        }
    }

    /// 1 for usage, configuration and input problems the user can fix by
    /// changing flags or files; 2 when an estimator fails on valid input or
    /// the data fall outside the kernel's sample space.
    pub fn exit_code(&self) -> u8 {
        match self.kind() {
            "numerical" | "data" => 2,
            _ => 1,
        }
    }

    pub fn row(&self) -> Option<usize> {
        match self {
            CliError::Parse { row, .. } => Some(*row),
            CliError::Core(e) => e.observation_index().map(|i| i + 1),
            _ => None,
        }
    }

    pub fn record(&self) -> ErrorRecord {
        ErrorRecord {
            kind: self.kind(),
            message: self.to_string(),
            exit_code: self.exit_code(),
            row: self.row(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
