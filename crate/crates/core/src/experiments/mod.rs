//! Monte Carlo harness: empirical recurrence laws against the averaged Poisson
//! limit, almost-sure rates along geometric subsequences, and diagnostics for
//! the short-return assumptions.
//!
//! Sample `i` draws from its own ChaCha8 stream keyed by `(seed, i)`, so each
//! orbit is reproducible in isolation and results do not depend on the number
//! of workers. Per-sample results merge by integer addition.

mod almost_sure;
pub mod config;
mod diagnostics;
mod distributional;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use almost_sure::{run_almost_sure, subsequence, AlmostSureResult, AsRow};
pub use config::{
    apply_overrides, A2Config, AlmostSureConfig, DensityConfig, DensitySource, E2Config, ExperimentConfig,
    MapConfig, PrecisionChoice, PrecisionConfig, UlamConfig,
};
pub use diagnostics::{
    chen_stein_e2, check_assumption_a2, doubling_return_measure, hitting_dispersion, j_horizon, A2Entry, AssumptionReport,
    Dispersion, E2Result, PooledEstimate,
};
pub use distributional::{run_distributional, DistributionalResult, EmpiricalPmf, TauSummary};

use crate::error::{Error, Result};
use crate::maps::{sample_invariant, sample_invariant_big, MapKind, MapModel};
use crate::orbit::{DyadicStream, PrecisionKind, PrecisionPolicy, StartPoint};

/// Most abort records kept for a report.
const ABORT_RECORDS: usize = 20;

/// Stream for sample `index` of experiment `domain`. Domain 0 is keyed by the
/// master seed alone.
pub fn sample_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let key = seed.wrapping_add(domain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Runs `f` on a pool of `workers` threads, or on the global pool when 0.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbortRecord {
    pub sample: u64,
    pub step: usize,
    pub log2_error: f64,
    pub log2_threshold: f64,
}

/// Precision-abort accounting for one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AbortSummary {
    /// Samples whose every precision level aborted; they are left out.
    pub excluded: u64,
    /// Re-runs at a higher precision, successful or not.
    pub retries: u64,
    /// Lowest-indexed excluded samples.
    pub records: Vec<AbortRecord>,
    /// More than 0.1% of samples excluded.
    pub failed: bool,
}

impl AbortSummary {
    fn merge(mut self, other: Self) -> Self {
        self.excluded += other.excluded;
        self.retries += other.retries;
        self.records.extend(other.records);
        self
    }

    fn finish(mut self, samples: u64) -> Self {
        self.records.sort_by_key(|r| r.sample);
        self.records.truncate(ABORT_RECORDS);
        self.failed = self.excluded * 1000 > samples;
        self
    }
}

/// Draws start points and runs orbits down a ladder of precision policies.
pub(crate) struct OrbitRunner<'a> {
    pub map: &'a MapModel,
    pub ladder: Vec<PrecisionPolicy>,
    pub n: usize,
    pub burn_in: usize,
}

impl<'a> OrbitRunner<'a> {
    pub fn new(cfg: &ExperimentConfig, map: &'a MapModel, n: usize) -> Result<Self> {
        let ladder = cfg.policy_ladder(map, n)?;
        ladder[0].validate(map)?;
        Ok(Self {
            map,
            ladder,
            n,
            burn_in: cfg.burn_in,
        })
    }

    pub fn policy(&self) -> PrecisionPolicy {
        self.ladder[0]
    }

    fn max_bits(&self) -> u32 {
        self.ladder
            .iter()
            .filter_map(|p| match p.kind {
                PrecisionKind::BigFixed { bits } => Some(bits),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// `x0 ~ mu` carrying enough bits for every rung of the ladder.
    ///
    /// Doubling orbits start from a random bit string of `n + slack + 64` bits
    /// whichever backend runs them, so the exact and BigFixed paths share starts.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> StartPoint {
        let policy = self.policy();
        let dyadic_len = self.n + policy.slack_bits as usize + 64;
        match (policy.kind, self.map.kind) {
            (PrecisionKind::ExactDyadic, _) => DyadicStream::random(rng, dyadic_len).into(),
            (PrecisionKind::BigFixed { .. }, MapKind::Doubling) => {
                let len = dyadic_len.max(self.max_bits() as usize);
                DyadicStream::random(rng, len).to_float(0, len as u32).into()
            }
            (PrecisionKind::BigFixed { .. }, _) => {
                sample_invariant_big(self.map, rng, self.max_bits(), self.burn_in).into()
            }
            (PrecisionKind::Hardware, _) => sample_invariant(self.map, rng, self.burn_in).into(),
        }
    }

    /// Runs `f` with each policy in turn until one completes without a
    /// precision abort. Other errors stop the run.
    pub fn run<T>(
        &self,
        sample: u64,
        x0: &StartPoint,
        f: impl Fn(&StartPoint, &PrecisionPolicy) -> Result<T>,
    ) -> Result<(std::result::Result<T, AbortRecord>, u64)> {
        let mut last = None;
        for (i, policy) in self.ladder.iter().enumerate() {
            match f(x0, policy) {
                Ok(v) => return Ok((Ok(v), i as u64)),
                Err(Error::PrecisionAbort {
                    step,
                    log2_error,
                    log2_threshold,
                }) => {
                    last = Some(AbortRecord {
                        sample,
                        step,
                        log2_error,
                        log2_threshold,
                    })
                }
                Err(e) => return Err(e),
            }
        }
        Ok((Err(last.expect("ladder is never empty")), self.ladder.len() as u64 - 1))
    }
}

/// Label of a precision policy for reports.
pub fn policy_label(p: &PrecisionPolicy) -> String {
    match p.kind {
        PrecisionKind::Hardware => "hardware".into(),
        PrecisionKind::BigFixed { bits } => format!("big_fixed({bits})"),
        PrecisionKind::ExactDyadic => "exact_dyadic".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn sample_streams_are_independent_of_order() {
        let a: Vec<u64> = (0..4).map(|i| sample_rng(9, 0, i).next_u64()).collect();
        let b: Vec<u64> = (0..4).rev().map(|i| sample_rng(9, 0, i).next_u64()).collect();
        assert_eq!(a, b.into_iter().rev().collect::<Vec<_>>());
        assert_ne!(a[0], a[1]);
        assert_ne!(sample_rng(9, 0, 0).next_u64(), sample_rng(9, 1, 0).next_u64());
    }

    #[test]
    fn abort_threshold_is_one_in_a_thousand() {
        let s = AbortSummary {
            excluded: 1,
            ..Default::default()
        };
        assert!(!s.clone().finish(1000).failed);
        assert!(s.finish(999).failed);
    }

    #[test]
    fn doubling_starts_agree_across_backends() {
        let cfg = ExperimentConfig::default();
        let map = MapModel::doubling();
        let exact = OrbitRunner::new(&cfg, &map, 500).unwrap();
        let mut big = OrbitRunner::new(&cfg, &map, 500).unwrap();
        big.ladder = vec![PrecisionPolicy::auto(&map, 500, 64)];
        let a = exact.draw(&mut sample_rng(3, 0, 5));
        let b = big.draw(&mut sample_rng(3, 0, 5));
        match (a, b) {
            (StartPoint::Dyadic(s), StartPoint::Big(f)) => assert_eq!(s.to_float(0, f.prec()), f),
            other => panic!("{other:?}"),
        }
    }
}
