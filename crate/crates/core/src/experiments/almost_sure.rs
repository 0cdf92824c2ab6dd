use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{policy_label, sample_rng, with_workers, AbortSummary, ExperimentConfig, OrbitRunner};
use crate::error::{Error, Result};
use crate::recurrence::{observe_recurrence, RecurrenceRequest};
use crate::stats::{wilson99, Interval};

/// Stream domain of almost-sure paths.
const DOMAIN: u64 = 1;

/// `(k, n_k)` with `n_k = floor(a^k)` in `[n_min, n_max]`, duplicates dropped.
pub fn subsequence(a: f64, n_min: usize, n_max: usize) -> Vec<(u32, usize)> {
    let mut out: Vec<(u32, usize)> = Vec::new();
    let mut k = 1u32;
    loop {
        let v = a.powi(k as i32).floor();
        if !v.is_finite() || v > n_max as f64 {
            break;
        }
        let n = v as usize;
        if n >= n_min && out.last().map_or(true, |(_, m)| *m < n) {
            out.push((k, n));
        }
        k += 1;
    }
    out
}

/// Upper rate `c log log n / n`.
fn upper_rate(c: f64, n: usize) -> f64 {
    let n = n as f64;
    c * n.ln().ln() / n
}

/// Summable lower sequence `1 / (n (log n)^2)`.
fn lower_rate(n: usize) -> f64 {
    let n = n as f64;
    1.0 / (n * n.ln() * n.ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsRow {
    pub k_index: u32,
    pub n_k: usize,
    pub r_upper: f64,
    pub s_lower: f64,
    /// Paths with `m_{n_k} >= r_upper`.
    pub viol_upper: u64,
    /// Paths with `m_{n_k} <= s_lower`.
    pub viol_lower: u64,
    pub viol_upper_freq: f64,
    pub viol_lower_freq: f64,
    pub ci_upper: Interval,
    pub ci_lower: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlmostSureResult {
    pub map: String,
    pub paths: usize,
    pub policy: String,
    pub rows: Vec<AsRow>,
    /// Paths whose recorded minima increase somewhere; always 0 for a sound run.
    pub inconsistent_paths: u64,
    pub aborts: AbortSummary,
}

impl AlmostSureResult {
    /// Writes `k_index, n_k, r_upper, s_lower, viol_upper_freq, viol_lower_freq,
    /// ci_lo, ci_hi, ci_lo_lower, ci_hi_lower`; the unsuffixed interval belongs
    /// to the upper-bound frequency.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "k_index",
            "n_k",
            "r_upper",
            "s_lower",
            "viol_upper_freq",
            "viol_lower_freq",
            "ci_lo",
            "ci_hi",
            "ci_lo_lower",
            "ci_hi_lower",
        ])?;
        for r in &self.rows {
            out.write_record([
                r.k_index.to_string(),
                r.n_k.to_string(),
                format!("{:.10e}", r.r_upper),
                format!("{:.10e}", r.s_lower),
                format!("{:.10}", r.viol_upper_freq),
                format!("{:.10}", r.viol_lower_freq),
                format!("{:.10}", r.ci_upper.lo),
                format!("{:.10}", r.ci_upper.hi),
                format!("{:.10}", r.ci_lower.lo),
                format!("{:.10}", r.ci_lower.hi),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone)]
struct Acc {
    upper: Vec<u64>,
    lower: Vec<u64>,
    inconsistent: u64,
    aborts: AbortSummary,
}

impl Acc {
    fn new(len: usize) -> Self {
        Self {
            upper: vec![0; len],
            lower: vec![0; len],
            inconsistent: 0,
            aborts: AbortSummary::default(),
        }
    }

    fn merge(mut self, o: Self) -> Self {
        for i in 0..self.upper.len() {
            self.upper[i] += o.upper[i];
            self.lower[i] += o.lower[i];
        }
        self.inconsistent += o.inconsistent;
        self.aborts = self.aborts.merge(o.aborts);
        self
    }
}

/// Violation frequencies of `m_n = min_{j <= n} d(f^j x, x)` against the upper
/// rate `c log log n / n` and the lower sequence `1 / (n (log n)^2)` along
/// `n_k = floor(a^k)`. Each path is one orbit of length `max n_k` observed at
/// the checkpoints.
pub fn run_almost_sure(cfg: &ExperimentConfig) -> Result<AlmostSureResult> {
    cfg.validate()?;
    let asc = &cfg.almost_sure;
    let seq = subsequence(asc.subseq_base, asc.n_min, asc.n_max);
    if seq.is_empty() {
        return Err(Error::config(
            "almost_sure.n_max",
            "no subsequence term falls in [n_min, n_max]",
        ));
    }
    let map = cfg.build_map()?;
    let n_last = seq.last().expect("non-empty").1;
    let runner = OrbitRunner::new(cfg, &map, n_last)?;
    let uppers: Vec<f64> = seq.iter().map(|(_, n)| upper_rate(asc.as_constant, *n)).collect();
    let lowers: Vec<f64> = seq.iter().map(|(_, n)| lower_rate(*n)).collect();
    let req = RecurrenceRequest {
        n: n_last,
        checkpoints: seq.iter().map(|(_, n)| *n).collect(),
        resolve_radius: lowers.iter().copied().reduce(f64::min),
        ..RecurrenceRequest::default()
    };

    let acc = with_workers(cfg.workers, || {
        (0..asc.paths as u64)
            .into_par_iter()
            .try_fold(
                || Acc::new(seq.len()),
                |mut acc, i| -> Result<Acc> {
                    let x0 = runner.draw(&mut sample_rng(cfg.seed, DOMAIN, i));
                    let (res, retries) = runner.run(i, &x0, |x, p| observe_recurrence(&map, x, &req, p))?;
                    acc.aborts.retries += retries;
                    match res {
                        Ok(series) => {
                            let m = &series.min_distance;
                            if m.windows(2).any(|w| w[1] > w[0]) {
                                acc.inconsistent += 1;
                            }
                            for (i, mk) in m.iter().enumerate() {
                                acc.upper[i] += u64::from(*mk >= uppers[i]);
                                acc.lower[i] += u64::from(*mk <= lowers[i]);
                            }
                        }
                        Err(rec) => {
                            acc.aborts.excluded += 1;
                            acc.aborts.records.push(rec);
                        }
                    }
                    Ok(acc)
                },
            )
            .try_reduce(|| Acc::new(seq.len()), |a, b| Ok(a.merge(b)))
    })??;
    let aborts = acc.aborts.finish(asc.paths as u64);
    let done = asc.paths as u64 - aborts.excluded;
    let rows = seq
        .iter()
        .enumerate()
        .map(|(i, &(k, n))| AsRow {
            k_index: k,
            n_k: n,
            r_upper: uppers[i],
            s_lower: lowers[i],
            viol_upper: acc.upper[i],
            viol_lower: acc.lower[i],
            viol_upper_freq: acc.upper[i] as f64 / done.max(1) as f64,
            viol_lower_freq: acc.lower[i] as f64 / done.max(1) as f64,
            ci_upper: wilson99(acc.upper[i], done),
            ci_lower: wilson99(acc.lower[i], done),
        })
        .collect();
    Ok(AlmostSureResult {
        map: map.name().to_string(),
        paths: asc.paths,
        policy: policy_label(&runner.policy()),
        rows,
        inconsistent_paths: acc.inconsistent,
        aborts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsequence_is_strictly_increasing() {
        let s = subsequence(1.5, 16, 1 << 16);
        assert_eq!(s.first(), Some(&(7, 17)));
        assert_eq!(s.last(), Some(&(27, 56815)));
        assert!(s.windows(2).all(|w| w[0].1 < w[1].1));
        let dense = subsequence(1.01, 16, 100);
        assert!(dense.windows(2).all(|w| w[0].1 < w[1].1));
    }

    #[test]
    fn rates_at_known_points() {
        let n = 1usize << 16;
        let ln = (n as f64).ln();
        assert!((upper_rate(1.0, n) - ln.ln() / n as f64).abs() < 1e-18);
        assert!((lower_rate(n) - 1.0 / (n as f64 * ln * ln)).abs() < 1e-20);
    }

    #[test]
    fn small_run_is_consistent() {
        let mut c = ExperimentConfig::default();
        c.almost_sure.paths = 200;
        c.almost_sure.n_max = 2000;
        let r = run_almost_sure(&c).unwrap();
        assert_eq!(r.inconsistent_paths, 0);
        assert_eq!(r.aborts.excluded, 0);
        assert!(r.rows.iter().all(|row| (0.0..=1.0).contains(&row.viol_upper_freq)));
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), r.rows.len() + 1);
    }
}
