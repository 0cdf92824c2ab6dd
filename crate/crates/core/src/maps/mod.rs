//! Interval maps, their invariant densities and samplers for the invariant measure.
//!
//! The catalogue covers the doubling map, beta transformations (closed-form density
//! for the golden mean), the Gauss map, the Manneville-Pomeau family
//! `x(1 + 2^g x^g)` on `[0, 1/2)` / `2x - 1` on `[1/2, 1]`, the intermittent cusp
//! `1 - 2 sqrt|x|` on `[-1, 1]` and the logistic map `4x(1 - x)`.
//!
//! Distances are always the absolute value on the ambient interval, also for the
//! mod-1 maps.

mod density;
mod histogram;
mod sample;
mod ulam;

use std::f64::consts::LN_2;

use rug::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use density::{BinnedDensity, DensityKind, DensityModel, Formula, Piece};
pub use histogram::histogram_density;
pub use sample::{random_unit_big, sample_invariant, sample_invariant_big, DEFAULT_BURN_IN};
pub use ulam::{ulam_density, UlamOptions};

pub const GOLDEN: f64 = 1.618_033_988_749_895;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "map", rename_all = "snake_case")]
pub enum MapKind {
    Doubling,
    Beta { beta: f64 },
    Gauss,
    #[serde(rename = "mp")]
    MannevillePomeau { gamma: f64 },
    Cusp,
    Logistic,
}

/// Derivative information used to budget orbit precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expansion {
    /// `|f'| <= bound` everywhere.
    UniformBound(f64),
    /// No useful uniform bound; budgets come from an estimated Lyapunov exponent.
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapModel {
    pub kind: MapKind,
    pub domain: (f64, f64),
    pub expansion: Expansion,
    pub density: DensityModel,
}

fn is_golden(beta: f64) -> bool {
    (1.0 / beta - (beta - 1.0)).abs() < 1e-12
}

impl MapModel {
    pub fn doubling() -> Self {
        Self {
            kind: MapKind::Doubling,
            domain: (0.0, 1.0),
            expansion: Expansion::UniformBound(2.0),
            density: DensityModel::closed_form(
                "closed_form:doubling",
                vec![Piece::new(0.0, 1.0, Formula::Constant { value: 1.0 })],
                vec![],
            ),
        }
    }

    /// `x -> beta x mod 1`. Only the golden mean has a closed-form density here.
    pub fn beta(beta: f64) -> Result<Self> {
        if !(beta > 1.0 && beta.is_finite()) {
            return Err(Error::config("beta", format!("beta must exceed 1, got {beta}")));
        }
        let density = if is_golden(beta) {
            let b2 = beta * beta;
            let high = b2 * beta / (b2 + 1.0);
            let low = b2 / (b2 + 1.0);
            let cut = 1.0 / beta;
            DensityModel::closed_form(
                "closed_form:beta_golden",
                vec![
                    Piece::new(0.0, cut, Formula::Constant { value: high }),
                    Piece::new(cut, 1.0, Formula::Constant { value: low }),
                ],
                vec![],
            )
        } else {
            DensityModel::unknown(format!("unknown:beta_{beta}"))
        };
        Ok(Self {
            kind: MapKind::Beta { beta },
            domain: (0.0, 1.0),
            expansion: Expansion::UniformBound(beta),
            density,
        })
    }

    pub fn golden_beta() -> Self {
        Self::beta(GOLDEN).expect("golden mean exceeds 1")
    }

    pub fn gauss() -> Self {
        Self {
            kind: MapKind::Gauss,
            domain: (0.0, 1.0),
            expansion: Expansion::Unbounded,
            density: DensityModel::closed_form(
                "closed_form:gauss",
                vec![Piece::new(0.0, 1.0, Formula::Gauss)],
                vec![],
            ),
        }
    }

    pub fn manneville_pomeau(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::config("gamma", format!("gamma must lie in (0, 1), got {gamma}")));
        }
        Ok(Self {
            kind: MapKind::MannevillePomeau { gamma },
            domain: (0.0, 1.0),
            expansion: Expansion::Unbounded,
            density: DensityModel::unknown(format!("unknown:mp_{gamma}")),
        })
    }

    pub fn cusp() -> Self {
        Self {
            kind: MapKind::Cusp,
            domain: (-1.0, 1.0),
            expansion: Expansion::Unbounded,
            density: DensityModel::closed_form(
                "closed_form:cusp",
                vec![Piece::new(-1.0, 1.0, Formula::Linear { intercept: 0.5, slope: -0.5 })],
                vec![1.0],
            ),
        }
    }

    /// `4x(1 - x)`; density is the arcsine law.
    pub fn logistic() -> Self {
        Self {
            kind: MapKind::Logistic,
            domain: (0.0, 1.0),
            expansion: Expansion::UniformBound(4.0),
            density: DensityModel::closed_form(
                "closed_form:logistic_arcsine",
                vec![Piece::new(0.0, 1.0, Formula::Arcsine)],
                vec![],
            ),
        }
    }

    /// Map by config name: `doubling | beta | gauss | mp | cusp | logistic`.
    pub fn from_name(name: &str, beta: Option<f64>, gamma: Option<f64>) -> Result<Self> {
        match name {
            "doubling" => Ok(Self::doubling()),
            "beta" => Self::beta(beta.unwrap_or(GOLDEN)),
            "gauss" => Ok(Self::gauss()),
            "mp" => Self::manneville_pomeau(gamma.unwrap_or(0.25)),
            "cusp" => Ok(Self::cusp()),
            "logistic" => Ok(Self::logistic()),
            other => Err(Error::config("map", format!("unknown map `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            MapKind::Doubling => "doubling",
            MapKind::Beta { .. } => "beta",
            MapKind::Gauss => "gauss",
            MapKind::MannevillePomeau { .. } => "mp",
            MapKind::Cusp => "cusp",
            MapKind::Logistic => "logistic",
        }
    }

    pub fn is_golden_beta(&self) -> bool {
        matches!(self.kind, MapKind::Beta { beta } if is_golden(beta))
    }

    pub fn with_density(mut self, density: DensityModel) -> Self {
        self.density = density;
        self
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.domain.0 && x <= self.domain.1
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                map: self.name().to_string(),
                x,
                lo: self.domain.0,
                hi: self.domain.1,
            })
        }
    }

    /// Hardware-precision evaluation of `f(x)`.
    pub fn eval_f64(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        Ok(self.step_f64(x))
    }

    /// Unchecked `f(x)` in `f64`, clamped to the domain.
    pub fn step_f64(&self, x: f64) -> f64 {
        let y = match self.kind {
            MapKind::Doubling => {
                let y = 2.0 * x;
                if y >= 1.0 {
                    y - 1.0
                } else {
                    y
                }
            }
            MapKind::Beta { beta } => {
                let y = beta * x;
                y - y.floor()
            }
            MapKind::Gauss => {
                if x == 0.0 {
                    0.0
                } else {
                    let y = 1.0 / x;
                    y - y.floor()
                }
            }
            MapKind::MannevillePomeau { gamma } => {
                if x < 0.5 {
                    x * (1.0 + (2.0 * x).powf(gamma))
                } else {
                    2.0 * x - 1.0
                }
            }
            MapKind::Cusp => 1.0 - 2.0 * x.abs().sqrt(),
            MapKind::Logistic => 4.0 * x * (1.0 - x),
        };
        y.clamp(self.domain.0, self.domain.1)
    }

    /// `|f'(x)|` (infinite at the cusp singularity and at 0 for the Gauss map).
    pub fn abs_derivative(&self, x: f64) -> f64 {
        match self.kind {
            MapKind::Doubling => 2.0,
            MapKind::Beta { beta } => beta,
            MapKind::Gauss => 1.0 / (x * x),
            MapKind::MannevillePomeau { gamma } => {
                if x < 0.5 {
                    1.0 + (1.0 + gamma) * (2.0 * x).powf(gamma)
                } else {
                    2.0
                }
            }
            MapKind::Cusp => 1.0 / x.abs().sqrt(),
            MapKind::Logistic => (4.0 - 8.0 * x).abs(),
        }
    }

    /// `f(x)` at the precision of `x`.
    pub fn eval_big(&self, x: &Float) -> Result<Float> {
        self.check_domain(x.to_f64())?;
        let mut kernel = BigKernel::new(self, x.prec());
        let mut y = x.clone();
        kernel.step(&mut y);
        Ok(y)
    }

    /// Estimated Lyapunov exponent (nats per step) from a hardware orbit.
    pub fn lyapunov_estimate(&self, steps: usize) -> f64 {
        // fixed, generic start so budgets are reproducible
        let mut x = self.domain.0 + (self.domain.1 - self.domain.0) * 0.381_966_011_250_105_1;
        let mut acc = 0.0;
        let mut counted = 0usize;
        for _ in 0..steps {
            let d = self.abs_derivative(x);
            if d.is_finite() && d > 0.0 {
                acc += d.ln();
                counted += 1;
            }
            x = self.step_f64(x);
        }
        if counted == 0 {
            return LN_2;
        }
        (acc / counted as f64).max(1e-3)
    }
}

/// Map constants prepared at a working precision for repeated in-place steps.
pub struct BigKernel {
    kind: MapKind,
    domain: (f64, f64),
    beta: Option<Float>,
    gamma: Option<Float>,
    /// `gamma = 1 / 2^k`: the power is `k` nested square roots.
    gamma_sqrt_depth: Option<u32>,
    scratch: Float,
}

impl BigKernel {
    pub fn new(map: &MapModel, prec: u32) -> Self {
        let beta = match map.kind {
            MapKind::Beta { beta } => Some(if is_golden(beta) {
                let mut b = Float::with_val(prec, 5u32);
                b.sqrt_mut();
                b += 1u32;
                b /= 2u32;
                b
            } else {
                Float::with_val(prec, beta)
            }),
            _ => None,
        };
        let (gamma, gamma_sqrt_depth) = match map.kind {
            MapKind::MannevillePomeau { gamma } => {
                let depth = (1..=8u32).find(|k| gamma == 0.5f64.powi(*k as i32));
                (Some(Float::with_val(prec, gamma)), depth)
            }
            _ => (None, None),
        };
        Self {
            kind: map.kind,
            domain: map.domain,
            beta,
            gamma,
            gamma_sqrt_depth,
            scratch: Float::new(prec),
        }
    }

    /// Rounds cached constants down to `prec` bits.
    pub fn truncate(&mut self, prec: u32) {
        if let Some(b) = self.beta.as_mut() {
            if b.prec() > prec {
                b.set_prec(prec);
            }
        }
        if self.scratch.prec() > prec {
            self.scratch.set_prec(prec);
        }
    }

    /// Replaces `x` by `f(x)`, rounding to the precision of `x`.
    pub fn step(&mut self, x: &mut Float) {
        use rug::ops::{Pow, SubFrom};
        use rug::Assign;
        let prec = x.prec();
        match self.kind {
            MapKind::Doubling => {
                *x *= 2u32;
                if *x >= 1u32 {
                    *x -= 1u32;
                }
            }
            MapKind::Beta { .. } => {
                *x *= self.beta.as_ref().expect("beta constant");
                if *x >= 1u32 {
                    let fl = Float::with_val(prec, x.floor_ref());
                    *x -= fl;
                }
            }
            MapKind::Gauss => {
                if !x.is_zero() {
                    x.recip_mut();
                    let fl = Float::with_val(prec, x.floor_ref());
                    *x -= fl;
                }
            }
            MapKind::MannevillePomeau { .. } => {
                if *x < 0.5f64 {
                    self.scratch.set_prec(prec);
                    self.scratch.assign(&*x);
                    self.scratch *= 2u32;
                    match self.gamma_sqrt_depth {
                        Some(depth) => {
                            for _ in 0..depth {
                                self.scratch.sqrt_mut();
                            }
                        }
                        None => {
                            let g = self.gamma.as_ref().expect("gamma constant");
                            let p = Float::with_val(prec, (&self.scratch).pow(g));
                            self.scratch = p;
                        }
                    }
                    self.scratch += 1u32;
                    *x *= &self.scratch;
                } else {
                    *x *= 2u32;
                    *x -= 1u32;
                }
            }
            MapKind::Cusp => {
                x.abs_mut();
                x.sqrt_mut();
                *x *= 2u32;
                x.sub_from(1u32);
            }
            MapKind::Logistic => {
                self.scratch.set_prec(prec);
                self.scratch.assign(&*x);
                self.scratch.sub_from(1u32);
                *x *= &self.scratch;
                *x *= 4u32;
            }
        }
        if *x < self.domain.0 {
            *x = Float::with_val(prec, self.domain.0);
        } else if *x > self.domain.1 {
            *x = Float::with_val(prec, self.domain.1);
        }
    }
}
