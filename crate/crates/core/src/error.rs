use alloc::string::String;

/// Errors shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A parameter block violates its documented invariants.
    #[error("configuration error: {0}")]
    Config(String),

    /// A signal could not be analysed (too short, degenerate fundamental).
    #[error("analysis error: {0}")]
    Analysis(String),

    /// The simulation produced a non-finite or runaway value.
    #[error("simulation fault at t = {time} s: {reason}")]
    Fault { time: f64, reason: String },

    /// A sample fed to a filter or controller was NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A reference could not be computed from the measured grid voltage.
    #[error("reference fault: {0}")]
    Reference(String),

    /// Every initial candidate of the optimizer was infeasible.
    #[error("optimizer initialization failed: {0}")]
    Init(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
