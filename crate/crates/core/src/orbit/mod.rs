//! Orbit generation under a choice of arithmetic backend.

mod dyadic;
mod engine;
mod precision;

pub use dyadic::{dyadic_window, DyadicStream};
pub use engine::{iterate_stream, Observer, OrbitPoint, OrbitSummary, StartPoint};
pub use precision::{
    guard_bits, required_bits, Guarantee, OrbitBudget, PrecisionKind, PrecisionPolicy, DEFAULT_ABORT_DIVISOR,
    DEFAULT_SLACK_BITS, LYAPUNOV_STEPS, MIN_BIG_BITS,
};
