use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("timestep {t} outside 1..={max}")]
    TimestepRange { t: usize, max: usize },
    #[error("degenerate timestep {t}: alpha_bar = {alpha_bar:e} makes the conversion ill-conditioned")]
    DegenerateTimestep { t: usize, alpha_bar: f64 },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("input side {side} is not a power-of-two multiple of 2^{depth}")]
    Divisibility { side: usize, depth: usize },
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("parameter budget {budget} unreachable: {reason}")]
    Budget { budget: usize, reason: String },
    #[error("zero variance in training data")]
    ZeroVariance,
    #[error("zero-norm ground truth")]
    ZeroNorm,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid split: {0}")]
    Split(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// Checks that `side` can be halved `depth` times on a power-of-two grid.
pub fn check_reducible(side: usize, depth: usize) -> Result<()> {
    let factor = 1usize.checked_shl(depth as u32).unwrap_or(0);
    if factor == 0 || !side.is_power_of_two() || side < factor {
        return Err(Error::Divisibility { side, depth });
    }
    Ok(())
}

pub(crate) fn shape_err(expected: impl core::fmt::Debug, got: impl core::fmt::Debug) -> Error {
    Error::Shape {
        expected: alloc::format!("{expected:?}"),
        got: alloc::format!("{got:?}"),
    }
}
