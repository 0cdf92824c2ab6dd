use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{Expansion, MapKind, MapModel};

pub const DEFAULT_SLACK_BITS: u32 = 64;
pub const DEFAULT_ABORT_DIVISOR: f64 = 8.0;
/// Hardware steps used to estimate a Lyapunov exponent.
pub const LYAPUNOV_STEPS: usize = 10_000;
pub const MIN_BIG_BITS: u32 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrecisionKind {
    Hardware,
    BigFixed { bits: u32 },
    ExactDyadic,
}

/// Arithmetic backend for orbit computation plus the error-control knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPolicy {
    #[serde(flatten)]
    pub kind: PrecisionKind,
    pub slack_bits: u32,
    /// Abort once the error estimate exceeds `smallest radius / abort_divisor`.
    pub abort_divisor: f64,
}

impl PrecisionPolicy {
    pub fn hardware() -> Self {
        Self {
            kind: PrecisionKind::Hardware,
            slack_bits: DEFAULT_SLACK_BITS,
            abort_divisor: DEFAULT_ABORT_DIVISOR,
        }
    }

    pub fn big_fixed(bits: u32) -> Self {
        Self {
            kind: PrecisionKind::BigFixed { bits },
            ..Self::hardware()
        }
    }

    pub fn exact_dyadic() -> Self {
        Self {
            kind: PrecisionKind::ExactDyadic,
            ..Self::hardware()
        }
    }

    /// BigFixed sized from [`required_bits`] plus guard bits for the
    /// accumulated per-step rounding, never below the 128-bit floor.
    pub fn auto(map: &MapModel, n: usize, slack_bits: u32) -> Self {
        let budget = required_bits(map, n, slack_bits);
        Self {
            kind: PrecisionKind::BigFixed {
                bits: (budget.bits_required + guard_bits(n)).max(MIN_BIG_BITS),
            },
            slack_bits,
            abort_divisor: DEFAULT_ABORT_DIVISOR,
        }
    }

    pub fn validate(&self, map: &MapModel) -> Result<()> {
        match self.kind {
            PrecisionKind::BigFixed { bits } if bits < MIN_BIG_BITS => Err(Error::config(
                "precision.bits",
                format!("BigFixed needs at least {MIN_BIG_BITS} bits, got {bits}"),
            )),
            PrecisionKind::ExactDyadic if map.kind != MapKind::Doubling => Err(Error::config(
                "precision.kind",
                format!("exact_dyadic only applies to the doubling map, not {}", map.name()),
            )),
            _ if !(self.abort_divisor > 0.0) => Err(Error::config(
                "precision.abort_divisor",
                "must be positive",
            )),
            _ => Ok(()),
        }
    }

    /// Near-tie window used when comparing distances to radii.
    pub fn tie_margin(&self) -> f64 {
        (-(self.slack_bits as f64)).exp2()
    }
}

/// Extra bits absorbing one rounding per step over `n` steps.
pub fn guard_bits(n: usize) -> u32 {
    ((n + 2) as f64).log2().ceil() as u32 + 4
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Guarantee {
    /// Every emitted point is within `abs_error` of the exact orbit.
    Guaranteed { abs_error: f64 },
    /// Budget from an estimated Lyapunov exponent; a runtime monitor enforces it.
    BestEffort,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitBudget {
    pub n: usize,
    pub bits_required: u32,
    /// Bits of accuracy lost per step, used to shed precision as the orbit advances.
    pub bits_per_step: f64,
    pub guarantee: Guarantee,
}

impl OrbitBudget {
    pub fn is_guaranteed(&self) -> bool {
        matches!(self.guarantee, Guarantee::Guaranteed { .. })
    }
}

/// Working precision needed to follow `n` steps with absolute error `2^-slack`.
///
/// Uniformly expanding maps need `ceil(n log2 L) + slack` bits. Maps without a
/// useful derivative bound use `ceil(n lambda / ln 2) + 4 slack` with `lambda` a
/// Lyapunov exponent estimated from a hardware orbit, and are flagged best-effort.
pub fn required_bits(map: &MapModel, n: usize, slack_bits: u32) -> OrbitBudget {
    match map.expansion {
        Expansion::UniformBound(bound) => {
            let per_step = bound.log2();
            let bits = (n as f64 * per_step - 1e-9).ceil().max(0.0) as u32 + slack_bits;
            OrbitBudget {
                n,
                bits_required: bits,
                bits_per_step: per_step,
                guarantee: Guarantee::Guaranteed {
                    abs_error: (-(slack_bits as f64)).exp2(),
                },
            }
        }
        Expansion::Unbounded => {
            let lambda = map.lyapunov_estimate(LYAPUNOV_STEPS);
            let per_step = lambda / std::f64::consts::LN_2;
            OrbitBudget {
                n,
                bits_required: (n as f64 * per_step).ceil() as u32 + 4 * slack_bits,
                bits_per_step: per_step,
                guarantee: Guarantee::BestEffort,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubling_budget() {
        let b = required_bits(&MapModel::doubling(), 1000, 64);
        assert_eq!(b.bits_required, 1064);
        assert!(b.is_guaranteed());
    }

    #[test]
    fn golden_beta_budget() {
        // log2 of the golden mean is 0.694241...
        let b = required_bits(&MapModel::golden_beta(), 1000, 64);
        assert_eq!(b.bits_required, 695 + 64);
        assert!(b.is_guaranteed());
    }

    #[test]
    fn cusp_budget_is_best_effort() {
        let b = required_bits(&MapModel::cusp(), 1000, 64);
        assert_eq!(b.guarantee, Guarantee::BestEffort);
        // the cusp map's Lyapunov exponent is 1/2 nat per step
        assert!((b.bits_per_step - 0.5 / std::f64::consts::LN_2).abs() < 0.1, "{}", b.bits_per_step);
        assert!(b.bits_required > 256);
    }

    #[test]
    fn policy_validation() {
        let d = MapModel::doubling();
        assert!(PrecisionPolicy::big_fixed(64).validate(&d).is_err());
        assert!(PrecisionPolicy::big_fixed(128).validate(&d).is_ok());
        assert!(PrecisionPolicy::exact_dyadic().validate(&d).is_ok());
        assert!(PrecisionPolicy::exact_dyadic().validate(&MapModel::cusp()).is_err());
    }
}
