//! Ulam discretisation of the transfer operator.
//!
//! Transition weights are exact preimage fractions `|I_i ∩ f^-1(I_j)| / |I_i|`,
//! found by bisection on each monotone branch. Intervals with infinitely many
//! branches (the Gauss map next to 0) fall back to mapping evenly spaced points.

use rug::Float;

use super::{BigKernel, BinnedDensity, DensityModel, MapKind, MapModel};
use crate::error::{Error, Result};
use crate::orbit::{PrecisionKind, PrecisionPolicy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UlamOptions {
    pub bins: usize,
    /// Points per bin for the sampling fallback.
    pub fallback_points: usize,
    pub max_iterations: usize,
    /// L1 change between successive iterates that counts as converged.
    pub tolerance: f64,
}

impl UlamOptions {
    pub fn new(bins: usize) -> Self {
        Self {
            bins,
            fallback_points: 64,
            max_iterations: 2_000_000,
            tolerance: 1e-12,
        }
    }
}

struct Evaluator<'a> {
    map: &'a MapModel,
    big: Option<(BigKernel, u32)>,
}

impl Evaluator<'_> {
    fn f(&mut self, x: f64) -> f64 {
        match self.big.as_mut() {
            None => self.map.step_f64(x),
            Some((kernel, prec)) => {
                let mut y = Float::with_val(*prec, x);
                kernel.step(&mut y);
                y.to_f64()
            }
        }
    }

    /// Left limit `f(b-)`, which differs from `f(b)` at mod-1 cuts.
    fn f_left(&mut self, b: f64) -> f64 {
        self.f(b - Self::nudge(b))
    }

    /// Right limit `f(a+)`, which differs from `f(a)` on decreasing branches.
    fn f_right(&mut self, a: f64) -> f64 {
        self.f(a + Self::nudge(a))
    }

    fn nudge(x: f64) -> f64 {
        4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE)
    }
}

/// Branch cuts inside `(lo, hi)`, or `None` when there are infinitely many.
fn branch_cuts(map: &MapModel, lo: f64, hi: f64) -> Option<Vec<f64>> {
    let inside = |c: &f64| *c > lo && *c < hi;
    let cuts: Vec<f64> = match map.kind {
        MapKind::Doubling | MapKind::MannevillePomeau { .. } | MapKind::Logistic => vec![0.5],
        MapKind::Cusp => vec![0.0],
        MapKind::Beta { beta } => (1..=beta.floor() as usize).map(|k| k as f64 / beta).collect(),
        MapKind::Gauss => {
            if lo <= 0.0 {
                return None;
            }
            let kmin = (1.0 / hi).floor().max(1.0) as usize;
            let kmax = (1.0 / lo).ceil() as usize;
            if kmax - kmin > 4096 {
                return None;
            }
            (kmin..=kmax).map(|k| 1.0 / k as f64).collect()
        }
    };
    let mut v: Vec<f64> = cuts.into_iter().filter(inside).collect();
    v.sort_by(f64::total_cmp);
    Some(v)
}

/// Row of the Ulam matrix as sparse `(column, weight)` pairs.
type Row = Vec<(u32, f64)>;

fn build_rows(map: &MapModel, opts: &UlamOptions, eval: &mut Evaluator<'_>) -> Vec<Row> {
    let (lo, hi) = map.domain;
    let n = opts.bins;
    let w = (hi - lo) / n as f64;
    let edge = |j: usize| lo + j as f64 * w;
    let bin_of = |y: f64| (((y - lo) / w).floor().max(0.0) as usize).min(n - 1);

    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = (edge(i), edge(i + 1));
        let mut acc: Vec<(u32, f64)> = Vec::new();
        match branch_cuts(map, a, b) {
            Some(cuts) => {
                let mut ends = vec![a];
                ends.extend(cuts);
                ends.push(b);
                for seg in ends.windows(2) {
                    let (s0, s1) = (seg[0], seg[1]);
                    let y0 = eval.f_right(s0);
                    let y1 = eval.f_left(s1);
                    let increasing = y1 >= y0;
                    let (ylo, yhi) = if increasing { (y0, y1) } else { (y1, y0) };
                    let (j0, j1) = (bin_of(ylo), bin_of(yhi));
                    // preimage of a level c inside [s0, s1]
                    let mut preimage = |c: f64| -> f64 {
                        if c <= ylo {
                            return if increasing { s0 } else { s1 };
                        }
                        if c >= yhi {
                            return if increasing { s1 } else { s0 };
                        }
                        let (mut l, mut r) = (s0, s1);
                        for _ in 0..64 {
                            let m = 0.5 * (l + r);
                            if m <= l || m >= r {
                                break;
                            }
                            let ym = eval.f(m);
                            if (ym < c) == increasing {
                                l = m;
                            } else {
                                r = m;
                            }
                        }
                        0.5 * (l + r)
                    };
                    let mut prev = preimage(edge(j0).max(ylo));
                    for j in j0..=j1 {
                        let next = preimage(edge(j + 1).min(yhi));
                        let len = (next - prev).abs();
                        if len > 0.0 {
                            acc.push((j as u32, len / w));
                        }
                        prev = next;
                    }
                }
            }
            None => {
                let s = opts.fallback_points;
                for k in 0..s {
                    let x = a + (k as f64 + 0.5) / s as f64 * w;
                    acc.push((bin_of(eval.f(x)) as u32, 1.0 / s as f64));
                }
            }
        }
        acc.sort_by_key(|e| e.0);
        let mut row: Row = Vec::with_capacity(acc.len());
        for (j, v) in acc {
            match row.last_mut() {
                Some(last) if last.0 == j => last.1 += v,
                _ => row.push((j, v)),
            }
        }
        let total: f64 = row.iter().map(|e| e.1).sum();
        for e in row.iter_mut() {
            e.1 /= total;
        }
        rows.push(row);
    }
    rows
}

/// Ulam estimate of the invariant density of `map`.
///
/// The stationary vector is found by power iteration on the lazy jump chain
/// (self-transitions removed, then mixed half-half with the identity); its fixed
/// point maps back to the stationary vector of the Ulam matrix via
/// `pi_i ∝ nu_i / (1 - P_ii)`. Bins whose mass nearly stays put, as next to a
/// neutral fixed point, then no longer slow the iteration down.
pub fn ulam_density(map: &MapModel, opts: &UlamOptions, policy: &PrecisionPolicy) -> Result<DensityModel> {
    if opts.bins < 16 {
        return Err(Error::Contract(format!("ulam needs at least 16 bins, got {}", opts.bins)));
    }
    let big = match policy.kind {
        PrecisionKind::Hardware | PrecisionKind::ExactDyadic => None,
        PrecisionKind::BigFixed { bits } => Some((BigKernel::new(map, bits), bits)),
    };
    let mut eval = Evaluator { map, big };
    let rows = build_rows(map, opts, &mut eval);
    let n = opts.bins;

    let stay: Vec<f64> = rows
        .iter()
        .enumerate()
        .map(|(i, row)| row.iter().find(|e| e.0 as usize == i).map_or(0.0, |e| e.1))
        .collect();
    if let Some(i) = stay.iter().position(|&p| p >= 1.0 - 1e-15) {
        return Err(Error::Contract(format!("bin {i} is absorbing; the Ulam chain is not ergodic")));
    }

    let recover = |nu: &[f64], out: &mut Vec<f64>| {
        out.clear();
        out.extend(nu.iter().zip(&stay).map(|(v, s)| v / (1.0 - s)));
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= total);
    };

    let mut nu = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut pi = Vec::with_capacity(n);
    let mut pi_prev = Vec::with_capacity(n);
    recover(&nu, &mut pi_prev);
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        next.iter_mut().zip(&nu).for_each(|(x, v)| *x = 0.5 * v);
        for (i, row) in rows.iter().enumerate() {
            let out = 0.5 * nu[i] / (1.0 - stay[i]);
            for &(j, p) in row {
                if j as usize != i {
                    next[j as usize] += out * p;
                }
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        std::mem::swap(&mut nu, &mut next);
        recover(&nu, &mut pi);
        residual = pi.iter().zip(&pi_prev).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut pi_prev);
        if residual < opts.tolerance {
            let w = (map.domain.1 - map.domain.0) / n as f64;
            let values = pi_prev.iter().map(|m| m / w).collect();
            return Ok(DensityModel::ulam(
                format!("ulam:{n}:{}", map.name()),
                BinnedDensity {
                    lo: map.domain.0,
                    hi: map.domain.1,
                    values,
                },
            ));
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iterations,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hw() -> PrecisionPolicy {
        PrecisionPolicy::hardware()
    }

    fn l1_to(map: &MapModel, ulam: &DensityModel) -> f64 {
        let b = ulam.binned().unwrap();
        let w = b.width();
        b.values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                // exact bin mass of the closed form against the Ulam mass
                let a = b.lo + i as f64 * w;
                let exact = map.density.cdf(a + w).unwrap() - map.density.cdf(a).unwrap();
                (exact - v * w).abs()
            })
            .sum()
    }

    #[test]
    fn doubling_is_uniform() {
        let d = ulam_density(&MapModel::doubling(), &UlamOptions::new(256), &hw()).unwrap();
        let b = d.binned().unwrap();
        assert_eq!(b.bins(), 256);
        for v in &b.values {
            assert!((v - 1.0).abs() < 1e-9, "{v}");
        }
        assert!((d.total_mass().unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn too_few_bins() {
        assert!(ulam_density(&MapModel::doubling(), &UlamOptions::new(8), &hw()).is_err());
    }

    #[test]
    fn golden_beta_matches_closed_form() {
        let m = MapModel::golden_beta();
        let d = ulam_density(&m, &UlamOptions::new(1024), &hw()).unwrap();
        assert!(l1_to(&m, &d) < 0.01);
    }

    #[test]
    fn gauss_matches_closed_form() {
        let m = MapModel::gauss();
        let d = ulam_density(&m, &UlamOptions::new(512), &hw()).unwrap();
        assert!(l1_to(&m, &d) < 0.01, "{}", l1_to(&m, &d));
    }

    #[test]
    fn logistic_near_arcsine_at_half() {
        let m = MapModel::logistic();
        let d = ulam_density(&m, &UlamOptions::new(4096), &hw()).unwrap();
        let v = d.eval(0.5).unwrap();
        assert!((v - 2.0 / std::f64::consts::PI).abs() < 0.02, "{v}");
    }

    #[test]
    fn non_convergence_is_reported() {
        let mut opts = UlamOptions::new(64);
        opts.max_iterations = 1;
        opts.tolerance = 0.0;
        let err = ulam_density(&MapModel::cusp(), &opts, &hw()).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { iterations: 1, .. }));
    }
}
