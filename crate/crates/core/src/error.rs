use thiserror::Error;

/// Errors raised by the simulator components.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("unknown loss-chain label `{0}`")]
    UnknownLabel(String),

    #[error("loss-chain label `{from}` comes after `{to}`")]
    ReversedOrder { from: String, to: String },

    #[error("grid resolution too coarse: {samples_per_feature:.1} samples per {feature_mhz} MHz feature (need >= {required})")]
    Resolution {
        feature_mhz: f64,
        samples_per_feature: f64,
        required: usize,
    },

    #[error("profile is not band-limited on its grid (cepstral tail {tail:.2e} exceeds {limit:.0e})")]
    NotBandLimited { tail: f64, limit: f64 },

    #[error("spectral leakage: {fraction:.2e} of the pulse energy lies at the edge of the frequency grid")]
    SpectralLeakage { fraction: f64 },

    #[error("window [{start_ns}, {stop_ns}) ns lies outside the grid")]
    WindowOutOfRange { start_ns: f64, stop_ns: f64 },

    #[error("echo window overlaps the transmitted pulse (storage time {storage_ns} ns < window {window_ns} ns)")]
    EchoOverlap { storage_ns: f64, window_ns: f64 },

    #[error("preparation step out of order: {0}")]
    PreparationOrder(String),

    #[error("SNR undefined: noise counts are zero")]
    UndefinedSnr,

    #[error("fit has no signal: {0}")]
    NoSignal(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

impl SimError {
    pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Self {
        SimError::InvalidParameter {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for SimError {
    fn from(e: std::io::Error) -> Self {
        SimError::Io(e.to_string())
    }
}
