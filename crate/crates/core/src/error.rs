use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid CGM measurement {0} mmol/L (must be finite and in (0, 50])")]
    InvalidMeasurement(f64),

    #[error("invalid meal announcement: {0}")]
    InvalidAnnouncement(String),

    #[error("sample sequencing error: expected t = {expected} min, got {got} min")]
    Sequencing { expected: f64, got: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("no steady state: {0}")]
    NoSteadyState(String),

    #[error("simulation diverged for subject {subject} at step {step}: {detail}")]
    Divergence {
        subject: usize,
        step: usize,
        detail: String,
    },

    #[error("population sampling exhausted: {rejected} rejections for {requested} subjects")]
    SamplingExhausted { requested: usize, rejected: usize },

    #[error("could not bracket a minimizer below the bolus cap {cap} mU/min")]
    BracketFailure { cap: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error at line {line}: {reason}")]
    Format { line: usize, reason: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
