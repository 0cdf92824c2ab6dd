use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sample_rng, with_workers, AbortSummary, ExperimentConfig, OrbitRunner};
use crate::error::{Error, Result};
use crate::maps::{MapKind, MapModel};
use crate::orbit::{iterate_stream, OrbitPoint, PrecisionPolicy, StartPoint};
use crate::recurrence::{hitting_count, observe_recurrence, RecurrenceRequest};
use crate::stats::{linear_fit, wilson99, Interval, Z99};

const A2_DOMAIN: u64 = 2;
const E2_DOMAIN: u64 = 3;
const DISPERSION_DOMAIN: u64 = 4;

/// Relative CI width above which an estimate is flagged and left out of fits.
const MAX_RELATIVE_WIDTH: f64 = 0.5;

/// Exact `mu(x : |f^j x - x| <= r)` for the doubling map with Lebesgue measure.
///
/// On branch `i` of `f^j` the displacement is `(2^j - 1) x - i`, which sweeps
/// `[-i/N, (N-1-i)/N]` with `N = 2^j`. Summing the overlaps with `[-r, r]` gives
/// `2 S / (N - 1)` with `S = m(m-1)/(2N) + (N-m) r` and `m = ceil(rN)` capped at `N`.
pub fn doubling_return_measure(j: u32, r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    if j == 0 {
        return 1.0;
    }
    let n = (j as f64).exp2();
    let m = (r * n).ceil().min(n);
    let s = m * (m - 1.0) / (2.0 * n) + (n - m) * r;
    (2.0 * s / (n - 1.0)).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A2Entry {
    /// Orbit length whose radius `n^-a` this is; 0 for a fixed radius.
    pub n: usize,
    pub j: usize,
    pub r: f64,
    pub hits: u64,
    pub trials: u64,
    pub mu_hat: f64,
    pub ci: Interval,
    pub oracle: Option<f64>,
    pub flagged: bool,
}

/// Return measure averaged over `j <= j_max(n)` at `r = n^-a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledEstimate {
    pub n: usize,
    pub r: f64,
    pub j_max: usize,
    pub mu_hat: f64,
    pub ci: Interval,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub map: String,
    pub a_exponent: f64,
    pub samples: usize,
    pub entries: Vec<A2Entry>,
    pub pooled: Vec<PooledEstimate>,
    /// Slope of `log mu_hat` against `log r` over unflagged pooled estimates.
    pub fitted_beta0: Option<f64>,
    pub e2_sums: Vec<E2Result>,
    pub aborts: AbortSummary,
}

impl AssumptionReport {
    /// Writes `j, r, mu_hat, ci_lo, ci_hi, oracle, n, flagged`; `oracle` is
    /// empty when no exact value is known.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["j", "r", "mu_hat", "ci_lo", "ci_hi", "oracle", "n", "flagged"])?;
        for e in &self.entries {
            out.write_record([
                e.j.to_string(),
                format!("{:.10e}", e.r),
                format!("{:.10e}", e.mu_hat),
                format!("{:.10e}", e.ci.lo),
                format!("{:.10e}", e.ci.hi),
                e.oracle.map(|o| format!("{o:.10e}")).unwrap_or_default(),
                e.n.to_string(),
                e.flagged.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `ceil((ln n)^2)`, the return-time horizon attached to orbit length `n`.
pub fn j_horizon(n: usize) -> usize {
    let l = (n as f64).ln();
    (l * l).ceil() as usize
}

fn flagged(mu: f64, ci: &Interval) -> bool {
    mu <= 0.0 || ci.width() / mu > MAX_RELATIVE_WIDTH
}

/// Monte Carlo estimates of `mu(E_j(r))` with `E_j(r) = {x : d(x, f^j x) <= r}`.
///
/// Radii `n^-a` for each `n` in the grid are tracked up to `j <= ceil((ln n)^2)`
/// and pooled over `j` for the scaling fit; fixed radii are tracked up to
/// `j_limit`. One orbit per sample serves every radius. The doubling map also
/// gets the exact value from [`doubling_return_measure`]. Chen-Stein sums for
/// the configured centres are attached.
pub fn check_assumption_a2(cfg: &ExperimentConfig, a_exponent: f64) -> Result<AssumptionReport> {
    cfg.validate()?;
    if !(a_exponent > 0.0 && a_exponent < 1.0) {
        return Err(Error::config("a2.a_exponent", format!("must lie in (0, 1), got {a_exponent}")));
    }
    let map = cfg.build_map()?;
    let a2 = &cfg.a2;
    // (n, r, j_max) per tracked radius
    let mut targets: Vec<(usize, f64, usize)> = a2
        .n_grid
        .iter()
        .map(|&n| (n, (n as f64).powf(-a_exponent), j_horizon(n)))
        .collect();
    targets.extend(a2.radii.iter().map(|&r| (0, r, a2.j_limit)));
    let horizon = targets.iter().map(|t| t.2).max().unwrap_or(0);
    if horizon == 0 {
        return Err(Error::config("a2.j_limit", "no return times to estimate"));
    }
    let mut radii: Vec<f64> = targets.iter().map(|t| t.1).collect();
    radii.sort_by(f64::total_cmp);
    radii.dedup();
    let slot: Vec<usize> = targets
        .iter()
        .map(|t| radii.iter().position(|r| *r == t.1).expect("present"))
        .collect();
    let req = RecurrenceRequest {
        n: horizon,
        radii: radii.clone(),
        record_hits: true,
        ..RecurrenceRequest::default()
    };
    let runner = OrbitRunner::new(cfg, &map, horizon)?;

    type Acc = (Vec<Vec<u64>>, AbortSummary);
    let empty = || -> Acc { (vec![vec![0; horizon + 1]; radii.len()], AbortSummary::default()) };
    let (hits, aborts) = with_workers(cfg.workers, || {
        (0..a2.samples as u64)
            .into_par_iter()
            .try_fold(empty, |mut acc, i| -> Result<Acc> {
                let x0 = runner.draw(&mut sample_rng(cfg.seed, A2_DOMAIN, i));
                let (res, retries) = runner.run(i, &x0, |x, p| observe_recurrence(&map, x, &req, p))?;
                acc.1.retries += retries;
                match res {
                    Ok(series) => {
                        for (ri, times) in series.hit_times.expect("requested").iter().enumerate() {
                            for &j in times {
                                acc.0[ri][j] += 1;
                            }
                        }
                    }
                    Err(rec) => {
                        acc.1.excluded += 1;
                        acc.1.records.push(rec);
                    }
                }
                Ok(acc)
            })
            .try_reduce(empty, |mut a, b| {
                for (x, y) in a.0.iter_mut().zip(&b.0) {
                    for (p, q) in x.iter_mut().zip(y) {
                        *p += q;
                    }
                }
                Ok((a.0, a.1.merge(b.1)))
            })
    })??;
    let aborts = aborts.finish(a2.samples as u64);
    let trials = a2.samples as u64 - aborts.excluded;

    let mut entries = Vec::new();
    let mut pooled = Vec::new();
    for (t, &(n, r, j_max)) in targets.iter().enumerate() {
        let row = &hits[slot[t]];
        let mut total = 0;
        for j in 1..=j_max {
            let c = row[j];
            total += c;
            let mu_hat = c as f64 / trials.max(1) as f64;
            let ci = wilson99(c, trials);
            entries.push(A2Entry {
                n,
                j,
                r,
                hits: c,
                trials,
                mu_hat,
                ci,
                oracle: (map.kind == MapKind::Doubling).then(|| doubling_return_measure(j as u32, r)),
                flagged: flagged(mu_hat, &ci),
            });
        }
        if n > 0 {
            // returns at different j are dependent; the interval is indicative
            let pooled_trials = trials * j_max as u64;
            let mu_hat = total as f64 / pooled_trials.max(1) as f64;
            let ci = wilson99(total, pooled_trials);
            pooled.push(PooledEstimate {
                n,
                r,
                j_max,
                mu_hat,
                ci,
                flagged: flagged(mu_hat, &ci),
            });
        }
    }
    let usable: Vec<&PooledEstimate> = pooled.iter().filter(|p| !p.flagged).collect();
    let fitted_beta0 = linear_fit(
        &usable.iter().map(|p| p.r.ln()).collect::<Vec<_>>(),
        &usable.iter().map(|p| p.mu_hat.ln()).collect::<Vec<_>>(),
    )
    .map(|(slope, _)| slope);

    let e2_sums = cfg
        .e2
        .centers
        .iter()
        .map(|&c| chen_stein_e2(cfg, c, cfg.e2.r, cfg.e2.p))
        .collect::<Result<Vec<_>>>()?;

    Ok(AssumptionReport {
        map: map.name().to_string(),
        a_exponent,
        samples: a2.samples,
        entries,
        pooled,
        fitted_beta0,
        e2_sums,
        aborts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2Result {
    pub center: f64,
    pub r: f64,
    pub p: usize,
    /// `mu(A)` for `A = B(center, r)` within the domain.
    pub mu_a: f64,
    /// `(j, mu(A ∩ f^-j A))` estimates with 99% intervals.
    pub per_j: Vec<(usize, f64, Interval)>,
    pub total: f64,
    pub total_ci: Interval,
    pub samples: usize,
}

/// Monte Carlo `Σ_{j=1}^{p} mu(A ∩ f^-j A)` for `A = B(center, r)`.
///
/// Points are drawn from `mu` conditioned on `A` by inverting the CDF on
/// `[F(center - r), F(center + r)]`, so each term is `mu(A)` times a conditional
/// return frequency.
pub fn chen_stein_e2(cfg: &ExperimentConfig, center: f64, r: f64, p: usize) -> Result<E2Result> {
    let map = cfg.build_map()?;
    if !map.contains(center) {
        return Err(Error::Domain {
            map: map.name().to_string(),
            x: center,
            lo: map.domain.0,
            hi: map.domain.1,
        });
    }
    if !(r > 0.0) {
        return Err(Error::config("e2.r", "must be positive"));
    }
    let samples = cfg.e2.samples;
    let (lo, hi) = ((center - r).max(map.domain.0), (center + r).min(map.domain.1));
    let (f_lo, f_hi) = (map.density.cdf(lo)?, map.density.cdf(hi)?);
    let mu_a = f_hi - f_lo;
    if p == 0 || mu_a <= 0.0 {
        return Ok(E2Result {
            center,
            r,
            p,
            mu_a,
            per_j: Vec::new(),
            total: 0.0,
            total_ci: Interval { lo: 0.0, hi: 0.0 },
            samples,
        });
    }
    let policy = match cfg.precision.kind {
        super::PrecisionChoice::Hardware => PrecisionPolicy::hardware(),
        _ => PrecisionPolicy::auto(&map, p, cfg.precision.slack_bits),
    };
    let margin = policy.tie_margin();

    type Acc = (Vec<u64>, u64, u64);
    let empty = || -> Acc { (vec![0; p + 1], 0, 0) };
    let (per, sum, sum_sq) = with_workers(cfg.workers, || {
        (0..samples as u64)
            .into_par_iter()
            .try_fold(empty, |mut acc, i| -> Result<Acc> {
                let mut rng = sample_rng(cfg.seed, E2_DOMAIN, i);
                let u = f_lo + (f_hi - f_lo) * rng.gen::<f64>();
                let x = map.density.inverse_cdf(u)?.clamp(lo, hi);
                let mut y = 0u64;
                let mut obs = |pt: &OrbitPoint<'_>| {
                    if (pt.value - center).abs() <= r + margin + 1e-15 && pt.distance_to(center) <= r + margin {
                        acc.0[pt.step] += 1;
                        y += 1;
                    }
                };
                iterate_stream(&map, &StartPoint::F64(x), p, &policy, &mut obs)?;
                acc.1 += y;
                acc.2 += y * y;
                Ok(acc)
            })
            .try_reduce(empty, |mut a, b| {
                for (x, y) in a.0.iter_mut().zip(&b.0) {
                    *x += y;
                }
                Ok((a.0, a.1 + b.1, a.2 + b.2))
            })
    })??;
    let m = samples as f64;
    let per_j = (1..=p)
        .map(|j| {
            let ci = wilson99(per[j], samples as u64);
            (
                j,
                mu_a * per[j] as f64 / m,
                Interval {
                    lo: mu_a * ci.lo,
                    hi: mu_a * ci.hi,
                },
            )
        })
        .collect();
    let mean = sum as f64 / m;
    let var = (sum_sq as f64 / m - mean * mean).max(0.0) * m / (m - 1.0);
    let half = Z99 * (var / m).sqrt();
    Ok(E2Result {
        center,
        r,
        p,
        mu_a,
        per_j,
        total: mu_a * mean,
        total_ci: Interval {
            lo: mu_a * (mean - half).max(0.0),
            hi: mu_a * (mean + half),
        },
        samples,
    })
}

/// Spread of the hitting count `N_n(B(center, r))` for `x0 ~ mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub center: f64,
    pub r: f64,
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    /// `variance / mean`; near 1 for Poisson counts, larger under clustering.
    pub index: f64,
    pub aborts: AbortSummary,
}

/// Hitting counts over `n` steps at `r = 1 / 2n`, so that `E N ≈ mu(B) n`.
pub fn hitting_dispersion(cfg: &ExperimentConfig, center: f64) -> Result<Dispersion> {
    let map: MapModel = cfg.build_map()?;
    let n = cfg.e2.dispersion_n;
    let r = 1.0 / (2.0 * n as f64);
    let samples = cfg.e2.dispersion_samples;
    let runner = OrbitRunner::new(cfg, &map, n)?;
    type Acc = (u64, u64, AbortSummary);
    let empty = || -> Acc { (0, 0, AbortSummary::default()) };
    let (sum, sum_sq, aborts) = with_workers(cfg.workers, || {
        (0..samples as u64)
            .into_par_iter()
            .try_fold(empty, |mut acc, i| -> Result<Acc> {
                let x0 = runner.draw(&mut sample_rng(cfg.seed, DISPERSION_DOMAIN, i));
                let (res, retries) = runner.run(i, &x0, |x, p| hitting_count(&map, x, n, center, r, p))?;
                acc.2.retries += retries;
                match res {
                    Ok(c) => {
                        acc.0 += c;
                        acc.1 += c * c;
                    }
                    Err(rec) => {
                        acc.2.excluded += 1;
                        acc.2.records.push(rec);
                    }
                }
                Ok(acc)
            })
            .try_reduce(empty, |a, b| Ok((a.0 + b.0, a.1 + b.1, a.2.merge(b.2))))
    })??;
    let aborts = aborts.finish(samples as u64);
    let m = (samples as u64 - aborts.excluded).max(2) as f64;
    let mean = sum as f64 / m;
    let variance = (sum_sq as f64 / m - mean * mean).max(0.0) * m / (m - 1.0);
    Ok(Dispersion {
        center,
        r,
        n,
        mean,
        variance,
        index: if mean > 0.0 { variance / mean } else { f64::NAN },
        aborts,
    })
}
