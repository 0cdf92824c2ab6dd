use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{policy_label, sample_rng, with_workers, AbortSummary, ExperimentConfig, OrbitRunner};
use crate::error::Result;
use crate::limitlaw::{density_moment, LimitLawTable};
use crate::recurrence::{observe_recurrence, radii_for_taus, RecurrenceRequest};
use crate::stats::{wilson99, Interval};

/// Empirical law of `R_n(tau / 2n, x0)` per `tau`, with an overflow bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalPmf {
    pub tau_grid: Vec<f64>,
    pub k_max: u64,
    /// `counts[t][k]` for `k <= k_max`; index `k_max + 1` is the overflow.
    pub counts: Vec<Vec<u64>>,
    /// Samples tabulated, excluding aborted ones.
    pub samples: u64,
    pub wilson_ci: Vec<Vec<Interval>>,
}

impl EmpiricalPmf {
    fn new(tau_grid: &[f64], k_max: u64, counts: Vec<Vec<u64>>, samples: u64) -> Self {
        let wilson_ci = counts
            .iter()
            .map(|row| row.iter().map(|c| wilson99(*c, samples)).collect())
            .collect();
        Self {
            tau_grid: tau_grid.to_vec(),
            k_max,
            counts,
            samples,
            wilson_ci,
        }
    }

    pub fn phat(&self, tau_index: usize, bucket: usize) -> f64 {
        if self.samples == 0 {
            return 0.0;
        }
        self.counts[tau_index][bucket] as f64 / self.samples as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSummary {
    pub tau: f64,
    /// Half the L1 distance between empirical and limit pmf, overflow included.
    pub tv_distance: f64,
    /// Largest `|phat(k) - G(tau, k)|` over `k <= k_max`.
    pub max_abs_dev: f64,
    pub mean: f64,
    pub std: f64,
    /// `tau ∫ rho^2`, absent when the integral diverges.
    pub theory_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionalResult {
    pub map: String,
    pub density: String,
    pub n: usize,
    pub samples: usize,
    pub policy: String,
    pub pmf: EmpiricalPmf,
    pub theory: LimitLawTable,
    pub per_tau: Vec<TauSummary>,
    /// Orbit points within the tie margin of some radius.
    pub ties: u64,
    pub aborts: AbortSummary,
}

impl DistributionalResult {
    pub fn max_tv(&self) -> f64 {
        self.per_tau.iter().map(|t| t.tv_distance).fold(0.0, f64::max)
    }

    /// Writes `tau, k, count, phat, ci_lo, ci_hi, G, method`, one row per bucket.
    /// The overflow bucket is labelled `>k_max`.
    pub fn write_pmf_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["tau", "k", "count", "phat", "ci_lo", "ci_hi", "G", "method"])?;
        let k_max = self.pmf.k_max as usize;
        for (t, tau) in self.pmf.tau_grid.iter().enumerate() {
            for b in 0..=k_max + 1 {
                let (label, g, method) = if b <= k_max {
                    (b.to_string(), self.theory.values[t][b], self.theory.methods[t][b].label())
                } else {
                    (format!(">{k_max}"), self.theory.overflow[t], "remainder")
                };
                let ci = self.pmf.wilson_ci[t][b];
                out.write_record([
                    tau.to_string(),
                    label,
                    self.pmf.counts[t][b].to_string(),
                    format!("{:.10}", self.pmf.phat(t, b)),
                    format!("{:.10}", ci.lo),
                    format!("{:.10}", ci.hi),
                    format!("{g:.10}"),
                    method.to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone)]
struct Acc {
    counts: Vec<Vec<u64>>,
    sum: Vec<u64>,
    sum_sq: Vec<u128>,
    ties: u64,
    aborts: AbortSummary,
}

impl Acc {
    fn new(taus: usize, buckets: usize) -> Self {
        Self {
            counts: vec![vec![0; buckets]; taus],
            sum: vec![0; taus],
            sum_sq: vec![0; taus],
            ties: 0,
            aborts: AbortSummary::default(),
        }
    }

    fn merge(mut self, o: Self) -> Self {
        for (a, b) in self.counts.iter_mut().zip(&o.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for t in 0..self.sum.len() {
            self.sum[t] += o.sum[t];
            self.sum_sq[t] += o.sum_sq[t];
        }
        self.ties += o.ties;
        self.aborts = self.aborts.merge(o.aborts);
        self
    }
}

/// Empirical pmf of `R_n(tau / 2n, x0)` for `x0 ~ mu` against `G(tau, k)`.
///
/// All radii share one orbit per sample. The limit-law table is evaluated
/// alongside the sampling. A run with more than 0.1% excluded samples is
/// returned with `aborts.failed` set.
pub fn run_distributional(cfg: &ExperimentConfig) -> Result<DistributionalResult> {
    cfg.validate()?;
    let map = cfg.build_map()?;
    let runner = OrbitRunner::new(cfg, &map, cfg.n)?;
    let taus = &cfg.tau_grid;
    let buckets = cfg.k_max as usize + 2;
    let radii = radii_for_taus(cfg.n, taus);
    let req = RecurrenceRequest::counts(cfg.n, radii);

    let (table, acc) = with_workers(cfg.workers, || {
        rayon::join(
            || LimitLawTable::build(&map, taus, cfg.k_max, &cfg.quadrature),
            || {
                (0..cfg.samples as u64)
                    .into_par_iter()
                    .try_fold(
                        || Acc::new(taus.len(), buckets),
                        |mut acc, i| -> Result<Acc> {
                            let x0 = runner.draw(&mut sample_rng(cfg.seed, 0, i));
                            let (res, retries) =
                                runner.run(i, &x0, |x, p| observe_recurrence(&map, x, &req, p))?;
                            acc.aborts.retries += retries;
                            match res {
                                Ok(series) => {
                                    for (t, c) in series.counts.iter().enumerate() {
                                        acc.counts[t][(*c as usize).min(buckets - 1)] += 1;
                                        acc.sum[t] += c;
                                        acc.sum_sq[t] += (*c as u128) * (*c as u128);
                                    }
                                    acc.ties += series.ties;
                                }
                                Err(rec) => {
                                    acc.aborts.excluded += 1;
                                    acc.aborts.records.push(rec);
                                }
                            }
                            Ok(acc)
                        },
                    )
                    .try_reduce(|| Acc::new(taus.len(), buckets), |a, b| Ok(a.merge(b)))
            },
        )
    })?;
    let table = table?;
    let acc = acc?;
    let aborts = acc.aborts.finish(cfg.samples as u64);
    let tabulated = cfg.samples as u64 - aborts.excluded;
    let pmf = EmpiricalPmf::new(taus, cfg.k_max, acc.counts, tabulated);

    let rho2 = match map.density.sup() {
        Ok(s) if s.is_finite() => Some(density_moment(&map.density, 2.0, &cfg.quadrature)?.value),
        _ => None,
    };
    let per_tau = taus
        .iter()
        .enumerate()
        .map(|(t, &tau)| {
            let mut tv = 0.0;
            let mut max_dev: f64 = 0.0;
            for b in 0..buckets {
                let g = if b + 1 < buckets {
                    table.values[t][b]
                } else {
                    table.overflow[t]
                };
                let d = (pmf.phat(t, b) - g).abs();
                tv += d;
                if b + 1 < buckets {
                    max_dev = max_dev.max(d);
                }
            }
            let m = tabulated.max(1) as f64;
            let mean = acc.sum[t] as f64 / m;
            let var = (acc.sum_sq[t] as f64 / m - mean * mean).max(0.0) * m / (m - 1.0).max(1.0);
            TauSummary {
                tau,
                tv_distance: tv / 2.0,
                max_abs_dev: max_dev,
                mean,
                std: var.sqrt(),
                theory_mean: rho2.map(|r| tau * r),
            }
        })
        .collect();

    Ok(DistributionalResult {
        map: map.name().to_string(),
        density: map.density.id.clone(),
        n: cfg.n,
        samples: cfg.samples,
        policy: policy_label(&runner.policy()),
        pmf,
        theory: table,
        per_tau,
        ties: acc.ties,
        aborts,
    })
}
