//! Large-`tau` behaviour of `G` and the summability diagnostic for almost-sure bounds.

use serde::{Deserialize, Serialize};

use super::quadrature::{integrate_rho, QuadratureConfig};
use super::log_poisson_like;
use crate::error::{Error, Result};
use crate::maps::DensityModel;
use crate::stats::{linear_fit, residual_ss};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum TailClass {
    /// `G ~ C tau^exponent`.
    PowerLaw { exponent: f64 },
    /// `G ~ C e^(-rate tau)`.
    Exponential { rate: f64 },
}

const TAIL_POINTS: usize = 16;

/// Fits `ln G(tau, k)` against `ln tau` and against `tau` on a geometric grid
/// over `[tau_probe / 4, tau_probe]` and keeps the better fit.
///
/// The reported exponent or rate is the local slope over the last grid step,
/// which is closer to the asymptotic value than the global fit.
pub fn tail_classification(
    density: &DensityModel,
    k: u64,
    tau_probe: f64,
    cfg: &QuadratureConfig,
) -> Result<TailClass> {
    if !(tau_probe >= 10.0) {
        return Err(Error::Contract(format!("tau_probe must be at least 10, got {tau_probe}")));
    }
    let lo = tau_probe / 4.0;
    let taus: Vec<f64> = (0..TAIL_POINTS)
        .map(|i| lo * (tau_probe / lo).powf(i as f64 / (TAIL_POINTS - 1) as f64))
        .collect();
    let log_g = taus
        .iter()
        .map(|&t| log_poisson_like(density, t, k, cfg))
        .collect::<Result<Vec<f64>>>()?;
    let log_t: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
    let (ps, pc) = linear_fit(&log_t, &log_g).ok_or_else(|| Error::Contract("degenerate fit".into()))?;
    let (es, ec) = linear_fit(&taus, &log_g).ok_or_else(|| Error::Contract("degenerate fit".into()))?;
    let power_rss = residual_ss(&log_t, &log_g, ps, pc);
    let exp_rss = residual_ss(&taus, &log_g, es, ec);
    let n = TAIL_POINTS - 1;
    let dlog = log_g[n] - log_g[n - 1];
    Ok(if power_rss <= exp_rss {
        TailClass::PowerLaw {
            exponent: dlog / (log_t[n] - log_t[n - 1]),
        }
    } else {
        TailClass::Exponential {
            rate: -dlog / (taus[n] - taus[n - 1]),
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Summability {
    Convergent,
    Divergent,
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummabilityResult {
    pub epsilon: f64,
    pub verdict: Summability,
    /// `Σ_{k <= K} a_k` plus the envelope's tail estimate when convergent.
    pub partial_sum: f64,
    /// Fitted `p` in `a_k ~ C k^p` over the last decade, if a fit was made.
    pub envelope_exponent: Option<f64>,
    pub terms: u64,
}

/// Number of terms summed directly.
const SUM_TERMS: u64 = 10_000;
/// Distance of the envelope exponent from `-1` needed for a verdict.
const EXPONENT_MARGIN: f64 = 0.05;
/// Largest acceptable root-mean-square residual of the log-log envelope fit.
const ENVELOPE_RMS: f64 = 0.02;

/// Checks `Σ_{k >= 1} ∫ rho e^(-eps k^gamma0 rho) dx < ∞` for each `eps`.
///
/// Densities bounded below by `m > 0` are dominated by `e^(-eps m k^gamma0)` and
/// are convergent outright. Otherwise the terms over the last decade of `k` are
/// fitted to a power law; exponents clearly below `-1` give "convergent",
/// clearly above give "divergent", and anything else, including a poor fit, is
/// "undetermined".
pub fn as_summability_check(
    density: &DensityModel,
    gamma0: f64,
    eps_grid: &[f64],
    cfg: &QuadratureConfig,
) -> Result<Vec<SummabilityResult>> {
    if !(gamma0 > 0.0 && gamma0 <= 1.0) {
        return Err(Error::Contract(format!("gamma0 must lie in (0, 1], got {gamma0}")));
    }
    let inf = density.inf()?;
    eps_grid
        .iter()
        .map(|&eps| {
            if !(eps > 0.0) {
                return Err(Error::Contract(format!("epsilon must be positive, got {eps}")));
            }
            let term = |k: u64| -> Result<f64> {
                let s = eps * (k as f64).powf(gamma0);
                Ok(integrate_rho(density, &move |r: f64| r * (-s * r).exp(), cfg)?.value)
            };
            let mut partial = 0.0;
            let mut terms = 0;
            let mut last = Vec::new();
            for k in 1..=SUM_TERMS {
                let a = term(k)?;
                partial += a;
                terms = k;
                if k >= SUM_TERMS / 10 && (k % (SUM_TERMS / 100) == 0) {
                    last.push((k as f64, a));
                }
                if inf > 0.0 && a < 1e-18 * partial {
                    break;
                }
            }
            if inf > 0.0 {
                return Ok(SummabilityResult {
                    epsilon: eps,
                    verdict: Summability::Convergent,
                    partial_sum: partial,
                    envelope_exponent: None,
                    terms,
                });
            }
            let pts: Vec<(f64, f64)> = last.into_iter().filter(|(_, a)| *a > 0.0).collect();
            if pts.len() < 10 {
                // terms vanished: the tail sits below f64 resolution
                return Ok(SummabilityResult {
                    epsilon: eps,
                    verdict: Summability::Undetermined,
                    partial_sum: partial,
                    envelope_exponent: None,
                    terms,
                });
            }
            let x: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
            let (p, c) = linear_fit(&x, &y).ok_or_else(|| Error::Contract("degenerate envelope".into()))?;
            let rms = (residual_ss(&x, &y, p, c) / x.len() as f64).sqrt();
            let verdict = if rms > ENVELOPE_RMS {
                Summability::Undetermined
            } else if p < -1.0 - EXPONENT_MARGIN {
                Summability::Convergent
            } else if p > -1.0 + EXPONENT_MARGIN {
                Summability::Divergent
            } else {
                Summability::Undetermined
            };
            if verdict == Summability::Convergent {
                // Σ_{k > K} C k^p ≈ C K^(p+1) / (-p - 1)
                let kk = terms as f64;
                partial += c.exp() * kk.powf(p + 1.0) / (-p - 1.0);
            }
            Ok(SummabilityResult {
                epsilon: eps,
                verdict,
                partial_sum: partial,
                envelope_exponent: Some(p),
                terms,
            })
        })
        .collect()
}
