use std::f64::consts::{LN_2, PI};

use rug::float::Constant;
use rug::ops::Pow;
use rug::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed-form density formulas that appear for the catalogued maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "formula", rename_all = "snake_case")]
pub enum Formula {
    /// `rho(x) = value`.
    Constant { value: f64 },
    /// `rho(x) = intercept + slope * x`.
    Linear { intercept: f64, slope: f64 },
    /// `rho(x) = 1 / ((1 + x) ln 2)`.
    Gauss,
    /// `rho(x) = 1 / (pi sqrt(x (1 - x)))`.
    Arcsine,
}

impl Formula {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Formula::Constant { value } => value,
            Formula::Linear { intercept, slope } => (intercept + slope * x).max(0.0),
            Formula::Gauss => 1.0 / ((1.0 + x) * LN_2),
            Formula::Arcsine => {
                let p = x * (1.0 - x);
                if p <= 0.0 {
                    f64::INFINITY
                } else {
                    1.0 / (PI * p.sqrt())
                }
            }
        }
    }

    /// `∫_lo^x rho`.
    fn primitive(&self, lo: f64, x: f64) -> f64 {
        match *self {
            Formula::Constant { value } => value * (x - lo),
            Formula::Linear { intercept, slope } => {
                intercept * (x - lo) + 0.5 * slope * (x * x - lo * lo)
            }
            Formula::Gauss => ((1.0 + x) / (1.0 + lo)).log2(),
            Formula::Arcsine => {
                2.0 / PI * (x.clamp(0.0, 1.0).sqrt().asin() - lo.clamp(0.0, 1.0).sqrt().asin())
            }
        }
    }

    /// Solves `∫_lo^x rho = mass` for `x`.
    fn invert_primitive(&self, lo: f64, mass: f64) -> f64 {
        match *self {
            Formula::Constant { value } => lo + mass / value,
            Formula::Linear { intercept, slope } => {
                if slope == 0.0 {
                    lo + mass / intercept
                } else {
                    // rho(x)^2 - rho(lo)^2 = 2 slope mass, rho(x) >= 0
                    let r0 = intercept + slope * lo;
                    let r = (r0 * r0 + 2.0 * slope * mass).max(0.0).sqrt();
                    (r - intercept) / slope
                }
            }
            Formula::Gauss => (1.0 + lo) * mass.exp2() - 1.0,
            Formula::Arcsine => {
                let s = (lo.clamp(0.0, 1.0).sqrt().asin() + 0.5 * PI * mass).sin();
                s * s
            }
        }
    }

    fn invert_primitive_big(&self, lo: f64, mass: &Float) -> Float {
        let prec = mass.prec();
        let lo_b = Float::with_val(prec, lo);
        match *self {
            Formula::Constant { value } => lo_b + Float::with_val(prec, mass / value),
            Formula::Linear { intercept, slope } => {
                if slope == 0.0 {
                    lo_b + Float::with_val(prec, mass / intercept)
                } else {
                    let r0 = intercept + slope * lo;
                    let mut r = Float::with_val(prec, mass * (2.0 * slope));
                    r += r0 * r0;
                    if r.is_sign_negative() {
                        r = Float::new(prec);
                    }
                    r.sqrt_mut();
                    r -= intercept;
                    r / slope
                }
            }
            Formula::Gauss => {
                let t = Float::with_val(prec, mass.exp2_ref());
                t * (1.0 + lo) - 1u32
            }
            Formula::Arcsine => {
                let mut a = lo_b.clamp(&0.0, &1.0).sqrt().asin();
                let pi = Float::with_val(prec, Constant::Pi);
                a += pi * mass / 2u32;
                a.sin().pow(2u32)
            }
        }
    }

    /// True when the formula is unbounded at `x`.
    pub fn is_singular_at(&self, x: f64) -> bool {
        matches!(self, Formula::Arcsine) && (x == 0.0 || x == 1.0)
    }
}

/// One closed-form piece on `[lo, hi)` (the last piece of a density is closed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    #[serde(flatten)]
    pub formula: Formula,
}

impl Piece {
    pub fn new(lo: f64, hi: f64, formula: Formula) -> Self {
        Self { lo, hi, formula }
    }

    pub fn mass(&self) -> f64 {
        self.formula.primitive(self.lo, self.hi)
    }
}

/// A density given by bin heights on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedDensity {
    pub lo: f64,
    pub hi: f64,
    /// Density heights, one per bin; `sum(values) * width = 1`.
    pub values: Vec<f64>,
}

impl BinnedDensity {
    pub fn bins(&self) -> usize {
        self.values.len()
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.values.len() as f64
    }

    pub fn bin_of(&self, x: f64) -> usize {
        let i = ((x - self.lo) / self.width()).floor();
        (i.max(0.0) as usize).min(self.values.len() - 1)
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.width()
    }

    fn cdf(&self, x: f64) -> f64 {
        let w = self.width();
        let i = self.bin_of(x);
        let below: f64 = self.values[..i].iter().sum::<f64>() * w;
        below + self.values[i] * (x - (self.lo + i as f64 * w)).max(0.0)
    }

    fn inverse_cdf(&self, u: f64) -> f64 {
        let w = self.width();
        let mut acc = 0.0;
        for (i, &v) in self.values.iter().enumerate() {
            let m = v * w;
            if acc + m >= u && m > 0.0 {
                return self.lo + i as f64 * w + (u - acc) / v;
            }
            acc += m;
        }
        self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityKind {
    ClosedForm { pieces: Vec<Piece> },
    Ulam(BinnedDensity),
    Histogram(BinnedDensity),
    Unknown,
}

/// Invariant density of a map together with its jump and zero metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityModel {
    /// Provenance label, e.g. `"closed_form:cusp"` or `"ulam:4096:mp"`.
    pub id: String,
    #[serde(flatten)]
    pub kind: DensityKind,
    /// Interior discontinuities, sorted.
    pub jump_points: Vec<f64>,
    /// Points where the density vanishes.
    pub zero_set: Vec<f64>,
}

impl DensityModel {
    pub fn closed_form(id: impl Into<String>, pieces: Vec<Piece>, zero_set: Vec<f64>) -> Self {
        let mut jump_points = Vec::new();
        for w in pieces.windows(2) {
            let left = w[0].formula.eval(w[0].hi);
            let right = w[1].formula.eval(w[1].lo);
            if (left - right).abs() > 0.0 {
                jump_points.push(w[1].lo);
            }
        }
        Self {
            id: id.into(),
            kind: DensityKind::ClosedForm { pieces },
            jump_points,
            zero_set,
        }
    }

    pub fn ulam(id: impl Into<String>, binned: BinnedDensity) -> Self {
        Self {
            id: id.into(),
            kind: DensityKind::Ulam(binned),
            jump_points: Vec::new(),
            zero_set: Vec::new(),
        }
    }

    pub fn histogram(id: impl Into<String>, binned: BinnedDensity) -> Self {
        Self {
            id: id.into(),
            kind: DensityKind::Histogram(binned),
            jump_points: Vec::new(),
            zero_set: Vec::new(),
        }
    }

    pub fn unknown(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind: DensityKind::Unknown,
            jump_points: Vec::new(),
            zero_set: Vec::new(),
        }
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self.kind, DensityKind::Unknown)
    }

    pub fn binned(&self) -> Option<&BinnedDensity> {
        match &self.kind {
            DensityKind::Ulam(b) | DensityKind::Histogram(b) => Some(b),
            _ => None,
        }
    }

    pub fn pieces(&self) -> Option<&[Piece]> {
        match &self.kind {
            DensityKind::ClosedForm { pieces } => Some(pieces),
            _ => None,
        }
    }

    fn unsupported(&self) -> Error {
        Error::Unsupported(format!(
            "density `{}` has no closed form; estimate it with ulam_density",
            self.id
        ))
    }

    /// Right-continuous density value at `x`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        match &self.kind {
            DensityKind::ClosedForm { pieces } => {
                let last = pieces.len() - 1;
                let piece = pieces
                    .iter()
                    .enumerate()
                    .find(|(i, p)| x >= p.lo && (x < p.hi || (*i == last && x <= p.hi)))
                    .map(|(_, p)| p)
                    .ok_or_else(|| Error::Domain {
                        map: self.id.clone(),
                        x,
                        lo: pieces[0].lo,
                        hi: pieces[last].hi,
                    })?;
                Ok(piece.formula.eval(x))
            }
            DensityKind::Ulam(b) | DensityKind::Histogram(b) => {
                if x < b.lo || x > b.hi {
                    return Err(Error::Domain {
                        map: self.id.clone(),
                        x,
                        lo: b.lo,
                        hi: b.hi,
                    });
                }
                Ok(b.values[b.bin_of(x)])
            }
            DensityKind::Unknown => Err(self.unsupported()),
        }
    }

    /// Left limit at `x` (equals [`eval`](Self::eval) away from jumps).
    pub fn left_limit(&self, x: f64) -> Result<f64> {
        match &self.kind {
            DensityKind::ClosedForm { pieces } => {
                match pieces.iter().find(|p| x > p.lo && x <= p.hi) {
                    Some(p) => Ok(p.formula.eval(x)),
                    None => self.eval(x),
                }
            }
            _ => self.eval(x),
        }
    }

    /// Jump sizes `rho(x+) - rho(x-)` at the recorded jump points.
    pub fn jump_values(&self) -> Result<Vec<f64>> {
        self.jump_points
            .iter()
            .map(|&x| Ok(self.eval(x)? - self.left_limit(x)?))
            .collect()
    }

    pub fn support(&self) -> Option<(f64, f64)> {
        match &self.kind {
            DensityKind::ClosedForm { pieces } => Some((pieces[0].lo, pieces[pieces.len() - 1].hi)),
            DensityKind::Ulam(b) | DensityKind::Histogram(b) => Some((b.lo, b.hi)),
            DensityKind::Unknown => None,
        }
    }

    /// Total mass: analytic per-piece primitives or the exact bin sum.
    pub fn total_mass(&self) -> Result<f64> {
        match &self.kind {
            DensityKind::ClosedForm { pieces } => Ok(pieces.iter().map(Piece::mass).sum()),
            DensityKind::Ulam(b) | DensityKind::Histogram(b) => Ok(b.mass()),
            DensityKind::Unknown => Err(self.unsupported()),
        }
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        match &self.kind {
            DensityKind::ClosedForm { pieces } => {
                let mut acc = 0.0;
                for p in pieces {
                    if x >= p.hi {
                        acc += p.mass();
                    } else if x > p.lo {
                        acc += p.formula.primitive(p.lo, x);
                    }
                }
                Ok(acc.clamp(0.0, 1.0))
            }
            DensityKind::Ulam(b) | DensityKind::Histogram(b) => Ok(b.cdf(x).clamp(0.0, 1.0)),
            DensityKind::Unknown => Err(self.unsupported()),
        }
    }

    pub fn inverse_cdf(&self, u: f64) -> Result<f64> {
        match &self.kind {
            DensityKind::ClosedForm { pieces } => {
                let mut acc = 0.0;
                for (i, p) in pieces.iter().enumerate() {
                    let m = p.mass();
                    if u < acc + m || i == pieces.len() - 1 {
                        let x = p.formula.invert_primitive(p.lo, u - acc);
                        return Ok(x.clamp(p.lo, p.hi));
                    }
                    acc += m;
                }
                unreachable!("density has at least one piece")
            }
            DensityKind::Ulam(b) | DensityKind::Histogram(b) => Ok(b.inverse_cdf(u)),
            DensityKind::Unknown => Err(self.unsupported()),
        }
    }

    /// Inverse CDF evaluated at the precision of `u`.
    ///
    /// Piece boundaries given as `f64` (e.g. `1/beta`) can be overridden with
    /// exact values through `boundary`, which maps a piece index to its left end.
    pub fn inverse_cdf_big(&self, u: &Float, boundary: &dyn Fn(usize) -> Option<Float>) -> Result<Float> {
        match &self.kind {
            DensityKind::ClosedForm { pieces } => {
                let prec = u.prec();
                let uf = u.to_f64();
                let mut acc = Float::with_val(prec, 0u32);
                for (i, p) in pieces.iter().enumerate() {
                    let exact_lo = boundary(i);
                    let exact_hi = boundary(i + 1);
                    let lo = exact_lo.clone().unwrap_or_else(|| Float::with_val(prec, p.lo));
                    let hi = exact_hi.unwrap_or_else(|| Float::with_val(prec, p.hi));
                    let m = match p.formula {
                        Formula::Constant { value } => Float::with_val(prec, &hi - &lo) * value,
                        _ => Float::with_val(prec, p.mass()),
                    };
                    let next = Float::with_val(prec, &acc + &m);
                    if uf < next.to_f64() || i == pieces.len() - 1 {
                        let mass = Float::with_val(prec, u - &acc);
                        let x = match (p.formula, exact_lo) {
                            (Formula::Constant { value }, Some(lo)) => lo + mass / value,
                            _ => p.formula.invert_primitive_big(p.lo, &mass),
                        };
                        return Ok(x.clamp(&lo, &hi));
                    }
                    acc = next;
                }
                unreachable!("density has at least one piece")
            }
            _ => {
                let x = self.inverse_cdf(u.to_f64())?;
                Ok(Float::with_val(u.prec(), x))
            }
        }
    }

    pub fn sup(&self) -> Result<f64> {
        match &self.kind {
            DensityKind::ClosedForm { pieces } => Ok(pieces
                .iter()
                .map(|p| match p.formula {
                    Formula::Arcsine => f64::INFINITY,
                    f => f.eval(p.lo).max(f.eval(p.hi)),
                })
                .fold(0.0, f64::max)),
            DensityKind::Ulam(b) | DensityKind::Histogram(b) => {
                Ok(b.values.iter().cloned().fold(0.0, f64::max))
            }
            DensityKind::Unknown => Err(self.unsupported()),
        }
    }

    pub fn inf(&self) -> Result<f64> {
        match &self.kind {
            DensityKind::ClosedForm { pieces } => Ok(pieces
                .iter()
                .map(|p| match p.formula {
                    Formula::Arcsine => 2.0 / PI,
                    f => f.eval(p.lo).min(f.eval(p.hi)),
                })
                .fold(f64::INFINITY, f64::min)),
            DensityKind::Ulam(b) | DensityKind::Histogram(b) => {
                Ok(b.values.iter().cloned().fold(f64::INFINITY, f64::min))
            }
            DensityKind::Unknown => Err(self.unsupported()),
        }
    }

    /// Panel boundaries for quadrature: support ends, jumps and zeros.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts = Vec::new();
        if let Some((lo, hi)) = self.support() {
            pts.push(lo);
            pts.push(hi);
            if let Some(pieces) = self.pieces() {
                pts.extend(pieces.iter().map(|p| p.lo));
            }
            pts.extend(self.jump_points.iter().copied());
            pts.extend(self.zero_set.iter().copied().filter(|z| *z >= lo && *z <= hi));
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}
