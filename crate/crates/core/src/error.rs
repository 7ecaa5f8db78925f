use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid `{field}`: {reason}")]
    InvalidInput { field: String, reason: String },

    /// Slope or degree bookkeeping does not close (non-integrable right-hand
    /// side, inconsistent mass target, reference with the wrong slopes).
    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("weight is inconsistent: declared degree {declared}, integrated mass {integrated}")]
    InconsistentWeight { declared: f64, integrated: f64 },

    #[error("Newton iteration did not converge after {iterations} steps (residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("regularized diagonal is not Cauchy: successive distances {trace:?}")]
    NonCauchy { trace: Vec<f64> },

    #[error("contraction failure at m = {m}: ratio {ratio} exceeds {bound}")]
    ContractionFailure { m: usize, ratio: f64, bound: f64 },

    #[error("quadrature truncated at level {level}, exponent {exponent}: boundary/peak ratio {ratio:.3e} on the {side} side")]
    QuadratureTruncation {
        level: usize,
        exponent: i64,
        side: &'static str,
        ratio: f64,
    },

    #[error("joint positivity precheck failed at (t = {t}, s = {s}): {quantity} = {value:.3e}")]
    JointPositivity {
        t: f64,
        s: f64,
        quantity: &'static str,
        value: f64,
    },

    #[error("fiber {index} failed: {source}")]
    Fiber {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("mismatched configurations: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidInput {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
