use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the simulator reports.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("spectral grid too coarse: spacing {spacing:.6e} rad/s exceeds {limit:.6e} rad/s")]
    Resolution { spacing: f64, limit: f64 },

    #[error("spectral grid span {span:.6e} rad/s does not cover the required {required:.6e} rad/s")]
    Coverage { span: f64, required: f64 },

    #[error("no storage window: gate {t_cut:.6e} s is not shorter than the echo time {echo_time:.6e} s")]
    NoStorageWindow { t_cut: f64, echo_time: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("operation not supported for {0} pulses")]
    UnsupportedKind(&'static str),

    #[error("efficiency {0} is unreachable")]
    UnreachableEfficiency(f64),

    #[error("pulse too short: efficiency {eta} is unreachable at chirp-duration product {product:.4}")]
    PulseTooShort { eta: f64, product: f64 },

    #[error("no pulse design reaches efficiency {eta} within duration {tau_max:.6e} s")]
    NoDesign { eta: f64, tau_max: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("degenerate crossing: mixing angle undefined at t = {t:.6e} s")]
    DegenerateCrossing { t: f64 },

    #[error("signal too short: bandwidth {bandwidth:.6e} rad/s exceeds comb bandwidth {comb:.6e} rad/s")]
    SignalTooShort { bandwidth: f64, comb: f64 },

    #[error("ambiguous echo window: train of {duration:.6e} s overlaps its echo at {echo_time:.6e} s")]
    AmbiguousWindow { duration: f64, echo_time: f64 },

    #[error("timeline error: {0}")]
    Timeline(String),

    #[error("overlap undefined for a zero-energy envelope")]
    UndefinedOverlap,

    #[error("grid error: {0}")]
    Grid(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Self::InvalidParameter { name, reason: reason.into() }
    }
}

/// Fails with [`Error::InvalidParameter`] unless `value` is finite and `> 0`.
pub(crate) fn require_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be finite and > 0, got {value}")))
    }
}

pub(crate) fn require_non_negative(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be finite and >= 0, got {value}")))
    }
}
