use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("evolution time {t0:e} s is not one mechanical period (2π/ω_z = {period:e} s)")]
    PeriodMismatch { t0: f64, period: f64 },

    #[error("trajectory spans [{start:e}, {end:e}] s, expected [0, {expected:e}] s")]
    TimeSpan { start: f64, end: f64, expected: f64 },

    #[error(
        "Fock cutoff {n_cut} inadequate: top-level population {population:e} at t = {time:e} s \
         (suggested cutoff >= {suggested})"
    )]
    CutoffInadequate {
        n_cut: usize,
        population: f64,
        time: f64,
        suggested: usize,
    },

    #[error("state check failed: {0}")]
    StateCheck(String),

    #[error("fringe fit failed: {0}")]
    FitFailed(String),

    #[error("noise step {dt:e} s too coarse for correlation time {tau_c:e} s (need dt <= tau_c/10)")]
    NoiseStep { dt: f64, tau_c: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
