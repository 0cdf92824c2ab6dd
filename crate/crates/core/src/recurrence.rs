//! Recurrence and hitting counts along a single orbit.
//!
//! All counts use the closed ball `d <= r` over steps `1..=n`. Distances within
//! the policy's tie margin of a radius count as inside and are tallied in `ties`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::MapModel;
use crate::orbit::{iterate_stream, Observer, OrbitPoint, PrecisionPolicy, StartPoint};

/// Radii `r = tau / 2n` for a grid of intensities.
pub fn radii_for_taus(n: usize, taus: &[f64]) -> Vec<f64> {
    taus.iter().map(|t| t / (2.0 * n as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceSeries {
    pub n: usize,
    pub radii: Vec<f64>,
    /// `counts[i] = R_n(radii[i], x0)`.
    pub counts: Vec<u64>,
    /// Return times per radius, when requested.
    pub hit_times: Option<Vec<Vec<usize>>>,
    pub checkpoints: Vec<usize>,
    /// `min_{k <= c} d(f^k x0, x0)` at each checkpoint `c`.
    pub min_distance: Vec<f64>,
    pub ties: u64,
}

impl RecurrenceSeries {
    /// `m_n`, the minimum over the whole orbit.
    pub fn final_min(&self) -> f64 {
        self.min_distance.last().copied().unwrap_or(f64::INFINITY)
    }
}

/// What one orbit pass should record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecurrenceRequest {
    pub n: usize,
    /// Ascending radii.
    pub radii: Vec<f64>,
    /// Ascending steps in `1..=n`; `n` itself is always included.
    pub checkpoints: Vec<usize>,
    pub record_hits: bool,
    /// Smallest distance that must be resolved, for the precision monitor.
    /// Defaults to the smallest positive radius.
    pub resolve_radius: Option<f64>,
}

impl RecurrenceRequest {
    pub fn counts(n: usize, radii: Vec<f64>) -> Self {
        Self {
            n,
            radii,
            ..Self::default()
        }
    }
}

struct RecurrenceObserver<'a> {
    req: &'a RecurrenceRequest,
    margin: f64,
    start: f64,
    /// `bumps[i]` counts steps whose smallest enclosing radius is `radii[i]`.
    bumps: Vec<u64>,
    hits: Option<Vec<Vec<usize>>>,
    min: f64,
    next_checkpoint: usize,
    mins: Vec<f64>,
    ties: u64,
}

impl Observer for RecurrenceObserver<'_> {
    fn min_radius(&self) -> f64 {
        self.req
            .resolve_radius
            .or_else(|| self.req.radii.iter().copied().find(|r| *r > 0.0))
            .unwrap_or(0.0)
    }

    fn observe(&mut self, p: &OrbitPoint<'_>) {
        let rough = (p.value - self.start).abs();
        let r_max = self.req.radii.last().copied().unwrap_or(f64::NEG_INFINITY);
        // value carries at most a few ulps of rounding
        let slop = 1e-15;
        if rough <= self.min + slop || rough <= r_max + self.margin + slop {
            let d = if r_max >= 0.0 {
                p.distance_to_start_within(r_max.max(self.min))
            } else {
                Some(p.distance_to_start())
            };
            if let Some(d) = d {
                self.min = self.min.min(d);
                let radii = &self.req.radii;
                let idx = radii.partition_point(|r| d > r + self.margin);
                if idx < radii.len() {
                    self.bumps[idx] += 1;
                    if radii[idx..].iter().any(|r| (d - r).abs() <= self.margin) {
                        self.ties += 1;
                    }
                    if let Some(h) = self.hits.as_mut() {
                        for list in &mut h[idx..] {
                            list.push(p.step);
                        }
                    }
                }
            }
        }
        while self.next_checkpoint < self.req.checkpoints.len()
            && self.req.checkpoints[self.next_checkpoint] == p.step
        {
            self.mins.push(self.min);
            self.next_checkpoint += 1;
        }
    }
}

fn validate_sorted(name: &str, v: &[f64]) -> Result<()> {
    if v.windows(2).any(|w| w[0] > w[1]) || v.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::Contract(format!("{name} must be non-negative and ascending")));
    }
    Ok(())
}

/// Single orbit pass producing all statistics in `req`.
pub fn observe_recurrence(
    map: &MapModel,
    x0: &StartPoint,
    req: &RecurrenceRequest,
    policy: &PrecisionPolicy,
) -> Result<RecurrenceSeries> {
    validate_sorted("radii", &req.radii)?;
    let mut req = req.clone();
    if req.checkpoints.windows(2).any(|w| w[0] >= w[1])
        || req.checkpoints.iter().any(|c| *c == 0 || *c > req.n)
    {
        return Err(Error::Contract("checkpoints must be ascending within 1..=n".into()));
    }
    if req.checkpoints.last() != Some(&req.n) && req.n > 0 {
        req.checkpoints.push(req.n);
    }
    let mut obs = RecurrenceObserver {
        req: &req,
        margin: policy.tie_margin(),
        start: x0.approx(),
        bumps: vec![0; req.radii.len()],
        hits: req.record_hits.then(|| vec![Vec::new(); req.radii.len()]),
        min: f64::INFINITY,
        next_checkpoint: 0,
        mins: Vec::with_capacity(req.checkpoints.len()),
        ties: 0,
    };
    iterate_stream(map, x0, req.n, policy, &mut obs)?;
    let mut counts = obs.bumps;
    for i in 1..counts.len() {
        counts[i] += counts[i - 1];
    }
    Ok(RecurrenceSeries {
        n: req.n,
        radii: req.radii.clone(),
        counts,
        hit_times: obs.hits,
        checkpoints: req.checkpoints.clone(),
        min_distance: obs.mins,
        ties: obs.ties,
    })
}

/// `R_n(r, x0)` for each of the ascending `radii`.
pub fn recurrence_count(
    map: &MapModel,
    x0: &StartPoint,
    n: usize,
    radii: &[f64],
    policy: &PrecisionPolicy,
) -> Result<RecurrenceSeries> {
    if radii.is_empty() {
        return Err(Error::Contract("recurrence_count needs at least one radius".into()));
    }
    observe_recurrence(map, x0, &RecurrenceRequest::counts(n, radii.to_vec()), policy)
}

/// `m_c = min_{k <= c} d(f^k x0, x0)` at each checkpoint.
///
/// `resolve_radius` sets the precision monitor's threshold; without one the
/// orbit must stay within `2^-slack` of exact.
pub fn min_distance_process(
    map: &MapModel,
    x0: &StartPoint,
    checkpoints: &[usize],
    resolve_radius: Option<f64>,
    policy: &PrecisionPolicy,
) -> Result<Vec<f64>> {
    let n = checkpoints.last().copied().unwrap_or(0);
    let req = RecurrenceRequest {
        n,
        checkpoints: checkpoints.to_vec(),
        resolve_radius,
        ..RecurrenceRequest::default()
    };
    Ok(observe_recurrence(map, x0, &req, policy)?.min_distance)
}

/// `N_n(B(center, r), x0)`, entries of the orbit into the closed ball.
pub fn hitting_count(
    map: &MapModel,
    x0: &StartPoint,
    n: usize,
    center: f64,
    r: f64,
    policy: &PrecisionPolicy,
) -> Result<u64> {
    if !map.contains(center) {
        return Err(Error::Domain {
            map: map.name().to_string(),
            x: center,
            lo: map.domain.0,
            hi: map.domain.1,
        });
    }
    struct Hits {
        center: f64,
        r: f64,
        margin: f64,
        count: u64,
    }
    impl Observer for Hits {
        fn min_radius(&self) -> f64 {
            self.r
        }
        fn observe(&mut self, p: &OrbitPoint<'_>) {
            if (p.value - self.center).abs() <= self.r + self.margin + 1e-15
                && p.distance_to(self.center) <= self.r + self.margin
            {
                self.count += 1;
            }
        }
    }
    let mut obs = Hits {
        center,
        r,
        margin: policy.tie_margin(),
        count: 0,
    };
    iterate_stream(map, x0, n, policy, &mut obs)?;
    Ok(obs.count)
}

/// Decreasing transform applied to the minimum distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PsiSpec {
    /// `psi(t) = -ln t`, with `a_n = 1`, `b_n = ln 2n`, `tau(u) = e^-u`.
    NegLog,
    /// `psi(t) = t^-alpha`, with `a_n = (2n)^-alpha`, `b_n = 0`, `tau(u) = u^(-1/alpha)`.
    Power { alpha: f64 },
}

impl PsiSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PsiSpec::Power { alpha } if !(alpha > 0.0) => {
                Err(Error::config("psi.alpha", format!("must be positive, got {alpha}")))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, t: f64) -> f64 {
        match *self {
            PsiSpec::NegLog => -t.ln(),
            PsiSpec::Power { alpha } => t.powf(-alpha),
        }
    }

    pub fn a_n(&self, n: usize) -> f64 {
        match *self {
            PsiSpec::NegLog => 1.0,
            PsiSpec::Power { alpha } => (2.0 * n as f64).powf(-alpha),
        }
    }

    pub fn b_n(&self, n: usize) -> f64 {
        match *self {
            PsiSpec::NegLog => (2.0 * n as f64).ln(),
            PsiSpec::Power { .. } => 0.0,
        }
    }

    /// Level `u / a_n + b_n` whose exceedance by `M_n` is studied.
    pub fn threshold(&self, u: f64, n: usize) -> f64 {
        u / self.a_n(n) + self.b_n(n)
    }

    /// Intensity `tau(u)` with `{M_n <= threshold(u, n)} = {m_n >= tau(u) / 2n}`.
    pub fn tau(&self, u: f64) -> f64 {
        match *self {
            PsiSpec::NegLog => (-u).exp(),
            PsiSpec::Power { alpha } => u.powf(-1.0 / alpha),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiMax {
    /// `max_k psi(d(f^k x0, x0)) = psi(m_n)`; `+inf` when the orbit returns exactly.
    pub value: f64,
    pub min_distance: f64,
    pub infinite: bool,
}

/// `M^psi_n = psi(m_n)`, valid because `psi` is decreasing.
pub fn max_psi_process(
    map: &MapModel,
    x0: &StartPoint,
    n: usize,
    psi: PsiSpec,
    resolve_radius: Option<f64>,
    policy: &PrecisionPolicy,
) -> Result<PsiMax> {
    psi.validate()?;
    let m = *min_distance_process(map, x0, &[n], resolve_radius, policy)?
        .last()
        .ok_or_else(|| Error::Contract("max_psi_process needs n >= 1".into()))?;
    Ok(psi_of_min(psi, m))
}

pub fn psi_of_min(psi: PsiSpec, m: f64) -> PsiMax {
    if m == 0.0 {
        PsiMax {
            value: f64::INFINITY,
            min_distance: 0.0,
            infinite: true,
        }
    } else {
        PsiMax {
            value: psi.apply(m),
            min_distance: m,
            infinite: false,
        }
    }
}
