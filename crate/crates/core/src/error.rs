use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grad(#[from] gradcore::GradError),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("metric `{0}` has no calibrated score range")]
    Uncalibrated(String),

    #[error("calibration of `{metric}` failed: {reason}")]
    Calibration { metric: String, reason: String },

    #[error("metric `{metric}` produced a non-finite score")]
    MetricFault { metric: String },

    #[error("unknown metric `{0}`")]
    UnknownMetric(String),

    #[error("invalid attack spec: {0}")]
    InvalidSpec(String),

    #[error("epsilon provider `{provider}` returned {value}; expected a positive finite quality")]
    Provider { provider: String, value: f64 },

    #[error("training diverged at step {step}; loss history has {} entries", history.len())]
    Divergence { step: usize, history: Vec<f64> },

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("perturbation file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
