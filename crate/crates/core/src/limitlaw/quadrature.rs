//! Adaptive 10/21-point Gauss-Kronrod panels over functions of the density.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{DensityKind, DensityModel, Formula, Piece};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_024_741_310,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

/// Gauss weights at `XGK[1], XGK[3], ..., XGK[9]`.
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    /// Extra panel boundaries on top of the density's own jumps and zeros.
    pub singularity_splits: Vec<f64>,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            max_subdivisions: 4000,
            singularity_splits: Vec::new(),
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) {
            return Err(Error::config("quadrature.abs_tol", "must be positive"));
        }
        if self.max_subdivisions == 0 {
            return Err(Error::config("quadrature.max_subdivisions", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub value: f64,
    pub est_error: f64,
    /// False when `max_subdivisions` ran out before reaching the tolerance.
    pub converged: bool,
}

/// One 21-point Kronrod rule with its embedded 10-point Gauss estimate.
fn gk21(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[10];
    let mut g = 0.0;
    for i in 0..10 {
        let dx = h * XGK[i];
        let pair = f(c - dx) + f(c + dx);
        k += WGK[i] * pair;
        if i % 2 == 1 {
            g += WG[i / 2] * pair;
        }
    }
    (k * h, (k - g).abs() * h)
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Adaptive integral of `f` over the union of `[breaks[i], breaks[i+1]]`,
/// always bisecting the panel with the largest error estimate.
pub fn adaptive(f: &dyn Fn(f64) -> f64, breaks: &[f64], abs_tol: f64, max_subdivisions: usize) -> Quadrature {
    let mut heap = BinaryHeap::new();
    let mut error = 0.0;
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            let (v, e) = gk21(f, w[0], w[1]);
            error += e;
            heap.push(Panel {
                a: w[0],
                b: w[1],
                value: v,
                error: e,
            });
        }
    }
    let mut splits = 0;
    while error > abs_tol && splits < max_subdivisions {
        let Some(p) = heap.pop() else { break };
        let m = 0.5 * (p.a + p.b);
        if m <= p.a || m >= p.b {
            // panel at machine resolution: keep its estimate
            heap.push(Panel { error: 0.0, ..p });
            error -= p.error;
            continue;
        }
        let (v1, e1) = gk21(f, p.a, m);
        let (v2, e2) = gk21(f, m, p.b);
        error += e1 + e2 - p.error;
        heap.push(Panel { a: p.a, b: m, value: v1, error: e1 });
        heap.push(Panel { a: m, b: p.b, value: v2, error: e2 });
        splits += 1;
    }
    // resum to shed the drift of incremental error updates
    let value = heap.iter().map(|p| p.value).sum();
    let error: f64 = heap.iter().map(|p| p.error).sum();
    Quadrature {
        value,
        est_error: error,
        converged: error <= abs_tol,
    }
}

/// `∫ h(rho(x)) dx` for a density, where `h(0) = 0` is not assumed.
///
/// Closed forms run adaptive panels split at piece ends, jumps, zeros and the
/// configured extra points; a panel next to an integrable singularity of the
/// density is integrated after the substitution `x = a + (b - a) t^2`.
/// Binned densities are summed exactly bin by bin.
pub fn integrate_rho(density: &DensityModel, h: &dyn Fn(f64) -> f64, cfg: &QuadratureConfig) -> Result<Quadrature> {
    integrate_rho_tol(density, h, cfg.abs_tol, cfg)
}

pub(crate) fn integrate_rho_tol(
    density: &DensityModel,
    h: &dyn Fn(f64) -> f64,
    abs_tol: f64,
    cfg: &QuadratureConfig,
) -> Result<Quadrature> {
    cfg.validate()?;
    match &density.kind {
        DensityKind::ClosedForm { pieces } => {
            let mut total = Quadrature {
                value: 0.0,
                est_error: 0.0,
                converged: true,
            };
            let mut extra: Vec<f64> = density.breakpoints();
            extra.extend(cfg.singularity_splits.iter().copied());
            let budget = (cfg.max_subdivisions / pieces.len()).max(1);
            let tol = abs_tol / pieces.len() as f64;
            for p in pieces {
                let q = integrate_piece(p, h, &extra, tol, budget);
                total.value += q.value;
                total.est_error += q.est_error;
                total.converged &= q.converged;
            }
            Ok(total)
        }
        DensityKind::Ulam(b) | DensityKind::Histogram(b) => {
            let w = b.width();
            let value = b.values.iter().map(|&v| h(v) * w).sum();
            Ok(Quadrature {
                value,
                est_error: 0.0,
                converged: true,
            })
        }
        DensityKind::Unknown => Err(Error::Unsupported(format!(
            "density `{}` has no closed form; estimate it with ulam_density first",
            density.id
        ))),
    }
}

fn integrate_piece(p: &Piece, h: &dyn Fn(f64) -> f64, extra: &[f64], tol: f64, budget: usize) -> Quadrature {
    let mut breaks: Vec<f64> = vec![p.lo, p.hi];
    breaks.extend(extra.iter().copied().filter(|x| *x > p.lo && *x < p.hi));
    let sing_lo = p.formula.is_singular_at(p.lo);
    let sing_hi = p.formula.is_singular_at(p.hi);
    if sing_lo && sing_hi && breaks.len() == 2 {
        breaks.push(0.5 * (p.lo + p.hi));
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let formula = p.formula;
    let plain = |x: f64| h(formula.eval(x));
    let n_panels = breaks.len() - 1;
    let mut total = Quadrature {
        value: 0.0,
        est_error: 0.0,
        converged: true,
    };
    for (i, w) in breaks.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let ptol = tol / n_panels as f64;
        let pbudget = (budget / n_panels).max(1);
        let q = if i == 0 && sing_lo {
            let g = |t: f64| 2.0 * (b - a) * t * h(eval_near(formula, a, (b - a) * t * t));
            adaptive(&g, &geometric_breaks(), ptol, pbudget)
        } else if i == n_panels - 1 && sing_hi {
            let g = |t: f64| 2.0 * (b - a) * t * h(eval_near(formula, b, (b - a) * t * t));
            adaptive(&g, &geometric_breaks(), ptol, pbudget)
        } else {
            adaptive(&plain, &[a, b], ptol, pbudget)
        };
        total.value += q.value;
        total.est_error += q.est_error;
        total.converged &= q.converged;
    }
    total
}

/// `0, 2^-48, ..., 1/2, 1`: features of `h` at every scale near the singular
/// end get their own panel, so no peak slips between the first nodes.
fn geometric_breaks() -> Vec<f64> {
    let mut v = vec![0.0];
    v.extend((0..=48).rev().map(|j| (-(j as f64)).exp2()));
    v
}

/// Density at distance `delta` from the singular endpoint `end`, computed from
/// `delta` directly so points next to `1` keep their resolution.
fn eval_near(formula: Formula, end: f64, delta: f64) -> f64 {
    let v = match formula {
        // x (1 - x) = delta (1 - delta) at both ends of [0, 1]
        Formula::Arcsine => 1.0 / (std::f64::consts::PI * (delta * (1.0 - delta)).sqrt()),
        f if end == 0.0 => f.eval(delta),
        f => f.eval(end - delta),
    };
    if v.is_finite() {
        v
    } else {
        f64::MAX
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::MapModel;

    #[test]
    fn weights_sum_to_two() {
        let k: f64 = 2.0 * WGK[..10].iter().sum::<f64>() + WGK[10];
        let g: f64 = 2.0 * WG.iter().sum::<f64>();
        assert!((k - 2.0).abs() < 1e-14, "{k}");
        assert!((g - 2.0).abs() < 1e-14, "{g}");
    }

    #[test]
    fn rules_are_exact_on_polynomials() {
        // Kronrod to degree 31, Gauss to degree 19
        for deg in 0..=31u32 {
            let f = move |x: f64| x.powi(deg as i32);
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg + 1) as f64 };
            let (k, e) = gk21(&f, -1.0, 1.0);
            assert!((k - exact).abs() < 1e-14, "deg {deg}: {k}");
            if deg <= 19 {
                assert!(e < 1e-14, "deg {deg}: gauss error {e}");
            }
        }
    }

    #[test]
    fn adaptive_handles_kinks() {
        let q = adaptive(&|x: f64| (x - 0.3).abs(), &[0.0, 1.0], 1e-12, 200);
        assert!(q.converged);
        assert!((q.value - (0.045 + 0.245)).abs() < 1e-12);
    }

    #[test]
    fn arcsine_mass_with_endpoint_substitution() {
        let d = MapModel::logistic().density;
        let q = integrate_rho(&d, &|r| r, &QuadratureConfig::default()).unwrap();
        assert!((q.value - 1.0).abs() < 1e-9, "{q:?}");
    }

    #[test]
    fn densities_normalised_by_quadrature() {
        for m in [MapModel::doubling(), MapModel::golden_beta(), MapModel::gauss(), MapModel::cusp()] {
            let q = integrate_rho(&m.density, &|r| r, &QuadratureConfig::default()).unwrap();
            assert!((q.value - 1.0).abs() < 1e-12, "{}: {}", m.name(), q.value);
        }
    }

    #[test]
    fn unknown_density_unsupported() {
        let d = MapModel::manneville_pomeau(0.25).unwrap().density;
        assert!(matches!(
            integrate_rho(&d, &|r| r, &QuadratureConfig::default()),
            Err(Error::Unsupported(_))
        ));
    }
}
