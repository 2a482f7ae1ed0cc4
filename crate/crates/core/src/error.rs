use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A malformed ranking or record. `row` is 1-based over data rows.
    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("IRLS diverged after {iterations} iterations (deviance {last_deviance} -> {attempted_deviance})")]
    IrlsDivergence {
        iterations: usize,
        last_deviance: f64,
        attempted_deviance: f64,
    },

    #[error("rank-deficient design; aliased columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    /// Observed information not positive definite. Each entry is an
    /// eigenvalue with the coefficient names that load on its eigenvector.
    #[error("information matrix is not positive definite; null directions: {}", format_null_directions(.directions))]
    NotPositiveDefinite { directions: Vec<(f64, Vec<String>)> },

    #[error("constrained refit for {coefficient} failed: {message}; retry with more constrained-fit iterations")]
    ConstrainedRefit {
        coefficient: String,
        message: String,
    },

    #[error("artifact schema version mismatch: expected {expected}, found {found}")]
    SchemaVersion { expected: u32, found: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_null_directions(directions: &[(f64, Vec<String>)]) -> String {
    directions
        .iter()
        .map(|(ev, names)| format!("eigenvalue {ev:.3e} [{}]", names.join(", ")))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    /// Short machine-readable category, used as the CLI error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Validation { .. } => "validation",
            Error::Capacity(_) => "capacity",
            Error::Data(_) => "data",
            Error::Config(_) => "config",
            Error::IrlsDivergence { .. } => "irls-divergence",
            Error::RankDeficient { .. } => "rank-deficient",
            Error::NotPositiveDefinite { .. } => "not-positive-definite",
            Error::ConstrainedRefit { .. } => "constrained-refit",
            Error::SchemaVersion { .. } => "schema-version",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
