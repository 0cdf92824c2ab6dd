//! The averaged Poisson law `G(tau, k) = ∫ tau^k rho^(k+1) e^(-rho tau) / k! dx`.

mod quadrature;
mod tail;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use quadrature::{adaptive, integrate_rho, Quadrature, QuadratureConfig};
pub use tail::{as_summability_check, tail_classification, Summability, SummabilityResult, TailClass};

use crate::error::{Error, Result};
use crate::maps::{DensityModel, MapKind, MapModel};
use crate::recurrence::PsiSpec;

/// Tail mass below which the `k`-sum is truncated.
pub const TAIL_CUTOFF: f64 = 1e-9;

pub fn ln_factorial(k: u64) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

/// `ln(tau^k rho^(k+1) e^(-rho tau) / k!)`, `-inf` where the integrand vanishes.
fn log_integrand(rho: f64, tau: f64, k: u64, ln_kfact: f64) -> f64 {
    if rho <= 0.0 || (tau == 0.0 && k > 0) {
        return f64::NEG_INFINITY;
    }
    let kf = k as f64;
    let ln_tau_k = if k == 0 { 0.0 } else { kf * tau.ln() };
    ln_tau_k + (kf + 1.0) * rho.ln() - rho * tau - ln_kfact
}

/// Poisson pmf `lambda^k e^-lambda / k!`.
pub fn poisson_pmf(lambda: f64, k: u64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (k as f64 * lambda.ln() - lambda - ln_factorial(k)).exp()
}

/// `P(Poisson(lambda) > k)`. Beyond the mean the tail is summed upward so small
/// tails keep full accuracy; below it the complement is used.
pub fn poisson_tail(lambda: f64, k: u64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    if (k as f64) < lambda {
        let head: f64 = (0..=k).map(|j| poisson_pmf(lambda, j)).sum();
        return (1.0 - head).max(0.0);
    }
    let mut j = k + 1;
    let mut term = poisson_pmf(lambda, j);
    let mut sum = 0.0;
    loop {
        sum += term;
        j += 1;
        term *= lambda / j as f64;
        if term < 1e-17 * sum || term == 0.0 {
            break;
        }
    }
    sum.min(1.0)
}

/// Smallest `K` with `P(Poisson(sup_rho tau) > K) < TAIL_CUTOFF`, or `None` for unbounded `rho`.
pub fn tail_rule(sup_rho: f64, tau: f64) -> Option<u64> {
    if !sup_rho.is_finite() {
        return None;
    }
    let lambda = sup_rho * tau;
    let mut k = lambda.floor() as u64;
    while poisson_tail(lambda, k) >= TAIL_CUTOFF {
        k += 1;
    }
    // walk back down in case the start overshot
    while k > 0 && poisson_tail(lambda, k - 1) < TAIL_CUTOFF {
        k -= 1;
    }
    Some(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Quadrature { est_error: f64 },
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::ClosedForm => "closed_form",
            Method::Quadrature { .. } => "quadrature",
        }
    }

    pub fn est_error(&self) -> f64 {
        match self {
            Method::ClosedForm => 0.0,
            Method::Quadrature { est_error } => *est_error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmfValue {
    pub value: f64,
    pub method: Method,
    /// False when the quadrature did not reach its tolerance.
    pub converged: bool,
}

fn validate_tau_k(tau: f64) -> Result<()> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::Contract(format!("tau must be finite and non-negative, got {tau}")));
    }
    Ok(())
}

/// Shifted integral: returns `(I, s)` with `∫ integrand = I e^s`.
///
/// `s` is the maximum of the log-integrand over the density's range (capped at
/// 0), so tiny integrands at large `tau` are lifted to order one.
fn scaled_integral(density: &DensityModel, tau: f64, k: u64, cfg: &QuadratureConfig) -> Result<(Quadrature, f64)> {
    let ln_kfact = ln_factorial(k);
    let (lo, hi) = (density.inf()?, density.sup()?);
    let peak = if tau > 0.0 { (k as f64 + 1.0) / tau } else { f64::INFINITY };
    let rho_star = peak.clamp(lo.max(f64::MIN_POSITIVE), hi.min(f64::MAX));
    let shift = log_integrand(rho_star, tau, k, ln_kfact);
    // only rescale upward: large integrands need no protection from underflow
    let shift = if shift.is_finite() { shift.min(0.0) } else { 0.0 };
    let h = move |rho: f64| (log_integrand(rho, tau, k, ln_kfact) - shift).exp();
    let q = quadrature::integrate_rho_tol(density, &h, cfg.abs_tol, cfg)?;
    Ok((q, shift))
}

/// `G(tau, k)` by quadrature (exact bin sums for binned densities).
pub fn poisson_like_pmf(density: &DensityModel, tau: f64, k: u64, cfg: &QuadratureConfig) -> Result<PmfValue> {
    validate_tau_k(tau)?;
    let (q, shift) = scaled_integral(density, tau, k, cfg)?;
    let scale = shift.exp();
    Ok(PmfValue {
        value: (q.value * scale).clamp(0.0, 1.0),
        method: Method::Quadrature {
            est_error: q.est_error * scale,
        },
        converged: q.converged,
    })
}

/// `ln G(tau, k)`, usable far beyond the range where `G` underflows.
pub fn log_poisson_like(density: &DensityModel, tau: f64, k: u64, cfg: &QuadratureConfig) -> Result<f64> {
    validate_tau_k(tau)?;
    let (q, shift) = scaled_integral(density, tau, k, cfg)?;
    Ok(q.value.ln() + shift)
}

/// `∫ rho^p dx`.
pub fn density_moment(density: &DensityModel, p: f64, cfg: &QuadratureConfig) -> Result<Quadrature> {
    integrate_rho(density, &move |r: f64| if r > 0.0 { r.powf(p) } else { 0.0 }, cfg)
}

/// `2 gamma(k + 2, tau) / (k! tau^2)` for the cusp map, stable for all `tau >= 0`.
fn cusp_closed_form(tau: f64, k: u64) -> f64 {
    let kf = k as f64;
    if tau > kf + 2.0 {
        // 2(k+1){1/tau^2 - e^-tau Σ_{j=0}^{k+1} tau^(k-j-1)/(k+1-j)!}
        let mut sum = 0.0;
        let mut term = 1.0; // tau^i / i! for i = 0..=k+1
        for i in 0..=k + 1 {
            if i > 0 {
                term *= tau / i as f64;
            }
            sum += term;
        }
        2.0 * (kf + 1.0) * (1.0 - (-tau).exp() * sum) / (tau * tau)
    } else {
        // gamma(a, tau) = tau^a e^-tau Σ_m tau^m / (a (a+1) ... (a+m))
        let a = kf + 2.0;
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut m = 1.0;
        while term > 1e-18 * sum {
            term *= tau / (a + m);
            sum += term;
            m += 1.0;
        }
        let ln_pref = if k == 0 { 0.0 } else { kf * tau.ln() } - tau - ln_factorial(k);
        2.0 * ln_pref.exp() * sum
    }
}

/// Closed-form `G(tau, k)` for the doubling, golden beta and cusp maps.
pub fn closed_form_pmf(map: &MapModel, tau: f64, k: u64) -> Result<f64> {
    validate_tau_k(tau)?;
    match map.kind {
        MapKind::Doubling => Ok(poisson_pmf(tau, k)),
        MapKind::Beta { .. } if map.is_golden_beta() => {
            // rho takes r1 on a set of length 1/b and r2 on one of length 1/b^2,
            // so the mu-weights are r1/b = b^2/(b^2+1) and r2/b^2 = 1/(b^2+1)
            let b = crate::maps::GOLDEN;
            let b2 = b * b;
            let r1 = b2 * b / (b2 + 1.0);
            let r2 = b2 / (b2 + 1.0);
            Ok(poisson_pmf(r1 * tau, k) * b2 / (b2 + 1.0) + poisson_pmf(r2 * tau, k) / (b2 + 1.0))
        }
        MapKind::Cusp => Ok(cusp_closed_form(tau, k)),
        _ => Err(Error::Unsupported(format!(
            "no closed form for map `{}`; use poisson_like_pmf quadrature",
            map.name()
        ))),
    }
}

pub fn has_closed_form(map: &MapModel) -> bool {
    matches!(map.kind, MapKind::Doubling | MapKind::Cusp) || map.is_golden_beta()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvtValue {
    pub u: f64,
    pub tau: f64,
    /// `lim mu{M^psi_n <= u / a_n + b_n} = G(tau(u), 0)`.
    pub value: f64,
    /// `tau(u)` overflowed and the value was saturated at 0.
    pub saturated: bool,
}

pub fn evt_distribution(density: &DensityModel, psi: PsiSpec, u: f64, cfg: &QuadratureConfig) -> Result<EvtValue> {
    psi.validate()?;
    if let PsiSpec::Power { .. } = psi {
        if !(u > 0.0) {
            return Err(Error::Contract(format!("power scaling needs u > 0, got {u}")));
        }
    }
    let tau = psi.tau(u);
    if !tau.is_finite() {
        return Ok(EvtValue {
            u,
            tau,
            value: 0.0,
            saturated: true,
        });
    }
    Ok(EvtValue {
        u,
        tau,
        value: poisson_like_pmf(density, tau, 0, cfg)?.value,
        saturated: false,
    })
}

/// `G[tau][k]` over a grid, with per-entry method and truncation diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitLawTable {
    pub density_ref: String,
    pub tau_grid: Vec<f64>,
    pub k_max: u64,
    pub values: Vec<Vec<f64>>,
    pub methods: Vec<Vec<Method>>,
    /// `1 - Σ_{k <= k_max} G(tau, k)`, the mass of the overflow bucket.
    pub overflow: Vec<f64>,
    pub converged: bool,
}

impl LimitLawTable {
    /// Closed forms where the map has one and its density is the closed form;
    /// quadrature or exact bin sums otherwise.
    pub fn build(map: &MapModel, tau_grid: &[f64], k_max: u64, cfg: &QuadratureConfig) -> Result<Self> {
        use rayon::prelude::*;
        if tau_grid.is_empty() {
            return Err(Error::Contract("tau grid is empty".into()));
        }
        for t in tau_grid {
            validate_tau_k(*t)?;
        }
        let closed = has_closed_form(map) && map.density.pieces().is_some();
        let rows: Vec<Result<(Vec<f64>, Vec<Method>, bool)>> = tau_grid
            .par_iter()
            .map(|&tau| {
                let mut vals = Vec::new();
                let mut methods = Vec::new();
                let mut ok = true;
                for k in 0..=k_max {
                    if closed {
                        vals.push(closed_form_pmf(map, tau, k)?);
                        methods.push(Method::ClosedForm);
                    } else {
                        let v = poisson_like_pmf(&map.density, tau, k, cfg)?;
                        ok &= v.converged;
                        vals.push(v.value);
                        methods.push(v.method);
                    }
                }
                Ok((vals, methods, ok))
            })
            .collect();
        let mut table = LimitLawTable {
            density_ref: map.density.id.clone(),
            tau_grid: tau_grid.to_vec(),
            k_max,
            values: Vec::new(),
            methods: Vec::new(),
            overflow: Vec::new(),
            converged: true,
        };
        for row in rows {
            let (v, m, ok) = row?;
            table.overflow.push((1.0 - v.iter().sum::<f64>()).max(0.0));
            table.values.push(v);
            table.methods.push(m);
            table.converged &= ok;
        }
        Ok(table)
    }

    pub fn get(&self, tau_index: usize, k: u64) -> f64 {
        self.values[tau_index][k as usize]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["tau", "k", "G", "method", "est_error"])?;
        for (i, tau) in self.tau_grid.iter().enumerate() {
            for (k, (g, m)) in self.values[i].iter().zip(&self.methods[i]).enumerate() {
                out.write_record([
                    tau.to_string(),
                    k.to_string(),
                    format!("{g:.17e}"),
                    m.label().to_string(),
                    format!("{:.3e}", m.est_error()),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `Σ_{k <= K} G(tau, k)` plus a bound on the remaining tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalisation {
    pub k_cut: u64,
    pub partial_sum: f64,
    pub tail_bound: f64,
    /// `Σ_{k <= K} k G(tau, k)`.
    pub partial_mean: f64,
}

/// Sums `G` up to the tail rule's `K(tau)`.
///
/// With `sup rho` finite the tail is bounded by the Poisson tail at rate
/// `sup rho tau`. Unbounded densities use `K = k_fallback` and integrate the
/// exact tail `∫ rho P(Poisson(rho tau) > K) dx` instead.
pub fn normalisation(
    density: &DensityModel,
    tau: f64,
    k_fallback: u64,
    cfg: &QuadratureConfig,
) -> Result<Normalisation> {
    let sup = density.sup()?;
    let (k_cut, tail) = match tail_rule(sup, tau) {
        Some(k) => (k, poisson_tail(sup * tau, k)),
        None => {
            let k = k_fallback;
            let q = integrate_rho(density, &move |r: f64| r * poisson_tail(r * tau, k), cfg)?;
            (k, q.value)
        }
    };
    let mut partial_sum = 0.0;
    let mut partial_mean = 0.0;
    for k in 0..=k_cut {
        let g = poisson_like_pmf(density, tau, k, cfg)?.value;
        partial_sum += g;
        partial_mean += k as f64 * g;
    }
    Ok(Normalisation {
        k_cut,
        partial_sum,
        tail_bound: tail,
        partial_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    fn supported() -> Vec<MapModel> {
        vec![MapModel::doubling(), MapModel::golden_beta(), MapModel::cusp()]
    }

    #[test]
    fn quadrature_examples() {
        let d = MapModel::doubling().density;
        assert!((poisson_like_pmf(&d, 1.0, 0, &cfg()).unwrap().value - (-1f64).exp()).abs() < 1e-12);
        for m in [MapModel::doubling(), MapModel::gauss(), MapModel::cusp(), MapModel::logistic()] {
            let g = poisson_like_pmf(&m.density, 0.0, 0, &cfg()).unwrap().value;
            assert!((g - 1.0).abs() < 1e-9, "{}: {g}", m.name());
        }
        let c = MapModel::cusp().density;
        let g = poisson_like_pmf(&c, 2.0, 0, &cfg()).unwrap().value;
        assert!((g - (0.5 - 1.5 * (-2f64).exp())).abs() < 1e-12);
        assert!((g - 0.296_997_08).abs() < 5e-9);
    }

    #[test]
    fn closed_form_examples() {
        let v = closed_form_pmf(&MapModel::doubling(), 2.0, 3).unwrap();
        assert!((v - 4.0 / 3.0 * (-2f64).exp()).abs() < 1e-15);
        assert!((v - 0.180_447_04).abs() < 5e-9);
        let v = closed_form_pmf(&MapModel::cusp(), 1.0, 1).unwrap();
        assert!((v - 4.0 * (1.0 - 2.5 / E)).abs() < 1e-14);
        assert!((v - 0.321_205_59).abs() < 5e-9);
        let v = closed_form_pmf(&MapModel::golden_beta(), 1.0, 0).unwrap();
        assert!((v - 0.358_46).abs() < 5e-5, "{v}");
        assert!(matches!(closed_form_pmf(&MapModel::gauss(), 1.0, 0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn golden_two_term_form_with_length_weights_is_the_lebesgue_average() {
        // (1/b) Poi(r1 tau) + (1/b^2) Poi(r2 tau) averages the Poisson law over
        // Lebesgue measure, not over mu; it is 0.37692 at tau = 1, k = 0
        let m = MapModel::golden_beta();
        let b = crate::maps::GOLDEN;
        let (r1, r2) = (b * b * b / (b * b + 1.0), b * b / (b * b + 1.0));
        for (tau, k) in [(1.0, 0u64), (2.0, 1), (0.5, 3)] {
            let literal = poisson_pmf(r1 * tau, k) / b + poisson_pmf(r2 * tau, k) / (b * b);
            let lebesgue = integrate_rho(&m.density, &|r| poisson_pmf(r * tau, k), &cfg()).unwrap().value;
            let mu = poisson_like_pmf(&m.density, tau, k, &cfg()).unwrap().value;
            assert!((literal - lebesgue).abs() < 1e-12);
            assert!((closed_form_pmf(&m, tau, k).unwrap() - mu).abs() < 1e-12);
            assert!((literal - mu).abs() > 1e-3);
        }
        let literal = (-r1).exp() / b + (-r2).exp() / (b * b);
        assert!((literal - 0.376_92).abs() < 5e-5);
    }

    #[test]
    fn cusp_branches_agree() {
        // the finite-sum form against the series form across the switch point
        for k in 0..10u64 {
            for tau in [0.5, 1.0, 3.0, k as f64 + 2.5, 8.0, 20.0] {
                let kf = k as f64;
                let mut sum = 0.0;
                for j in 0..=k + 1 {
                    sum += tau.powi(k as i32 - j as i32 - 1) / (ln_factorial(k + 1 - j)).exp();
                }
                let expanded = 2.0 * (kf + 1.0) * (1.0 / (tau * tau) - (-tau).exp() * sum);
                let ours = cusp_closed_form(tau, k);
                assert!((expanded - ours).abs() < 1e-11, "k={k} tau={tau}: {expanded} vs {ours}");
            }
        }
    }

    #[test]
    fn closed_form_matches_quadrature() {
        for m in supported() {
            for tau in [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 20.0] {
                for k in 0..=8 {
                    let c = closed_form_pmf(&m, tau, k).unwrap();
                    let q = poisson_like_pmf(&m.density, tau, k, &cfg()).unwrap();
                    assert!((c - q.value).abs() <= 1e-8, "{} tau={tau} k={k}: {c} vs {}", m.name(), q.value);
                    assert!(q.converged);
                }
            }
        }
    }

    #[test]
    fn normalisation_and_mean() {
        for m in [
            MapModel::doubling(),
            MapModel::golden_beta(),
            MapModel::gauss(),
            MapModel::cusp(),
            MapModel::logistic(),
        ] {
            let rho2 = density_moment(&m.density, 2.0, &cfg()).unwrap().value;
            for tau in [0.25, 0.5, 1.0, 2.0, 4.0, 8.0] {
                let n = normalisation(&m.density, tau, 64, &cfg()).unwrap();
                assert!((n.partial_sum + n.tail_bound - 1.0).abs() <= 1e-6, "{} {tau}: {n:?}", m.name());
                if m.density.sup().unwrap().is_finite() {
                    assert!((n.partial_mean - tau * rho2).abs() <= 1e-6, "{} {tau}: {n:?}", m.name());
                }
            }
        }
        let cusp2 = density_moment(&MapModel::cusp().density, 2.0, &cfg()).unwrap().value;
        assert!((cusp2 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn g0_strictly_decreasing() {
        for m in [MapModel::doubling(), MapModel::golden_beta(), MapModel::gauss(), MapModel::cusp()] {
            let mut prev = 1.0 + 1e-12;
            for i in 0..40 {
                let tau = 0.25 * i as f64;
                let g = poisson_like_pmf(&m.density, tau, 0, &cfg()).unwrap().value;
                assert!(g < prev, "{} tau={tau}", m.name());
                prev = g;
            }
        }
    }

    #[test]
    fn evt_examples() {
        let d = MapModel::doubling().density;
        let v = evt_distribution(&d, PsiSpec::NegLog, 0.0, &cfg()).unwrap();
        assert!((v.value - (-1f64).exp()).abs() < 1e-12);
        let v = evt_distribution(&d, PsiSpec::Power { alpha: 1.0 }, 2.0, &cfg()).unwrap();
        assert!((v.value - (-0.5f64).exp()).abs() < 1e-12);
        let v = evt_distribution(&d, PsiSpec::NegLog, 50.0, &cfg()).unwrap();
        assert!((v.value - 1.0).abs() < 1e-12);
        let v = evt_distribution(&d, PsiSpec::NegLog, -1000.0, &cfg()).unwrap();
        assert!(v.saturated && v.value == 0.0);
        assert!(evt_distribution(&d, PsiSpec::Power { alpha: 1.0 }, 0.0, &cfg()).is_err());
    }

    #[test]
    fn tail_rule_bounds_poisson_tail() {
        let k = tail_rule(1.0, 1.0).unwrap();
        assert!(poisson_tail(1.0, k) < TAIL_CUTOFF);
        assert!(poisson_tail(1.0, k - 1) >= TAIL_CUTOFF);
        assert!(tail_rule(f64::INFINITY, 1.0).is_none());
        assert!((poisson_tail(2.0, 0) - (1.0 - (-2f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn table_outputs() {
        let t = LimitLawTable::build(&MapModel::cusp(), &[1.0, 2.0], 2, &cfg()).unwrap();
        assert_eq!(t.methods[1][0], Method::ClosedForm);
        assert!((t.get(1, 0) - 0.296_997_08).abs() < 5e-9);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 3);
        assert!(text.starts_with("tau,k,G,method,est_error"));
        assert!(t.to_json().unwrap().contains("closed_form:cusp"));
        let g = LimitLawTable::build(&MapModel::gauss(), &[1.0], 3, &cfg()).unwrap();
        assert!(matches!(g.methods[0][0], Method::Quadrature { .. }));
        assert!(g.values.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }
}
