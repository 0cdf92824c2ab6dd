use rug::Float;

use super::dyadic::{screened_distance, DyadicStream};
use super::precision::{required_bits, PrecisionKind, PrecisionPolicy};
use crate::error::{Error, Result};
use crate::maps::{BigKernel, MapKind, MapModel};

/// Initial condition in the representation matching a backend.
#[derive(Debug, Clone)]
pub enum StartPoint {
    F64(f64),
    Big(Float),
    Dyadic(DyadicStream),
}

impl StartPoint {
    pub fn approx(&self) -> f64 {
        match self {
            StartPoint::F64(x) => *x,
            StartPoint::Big(x) => x.to_f64(),
            StartPoint::Dyadic(s) => s.value_f64(0),
        }
    }
}

impl From<f64> for StartPoint {
    fn from(x: f64) -> Self {
        StartPoint::F64(x)
    }
}

impl From<Float> for StartPoint {
    fn from(x: Float) -> Self {
        StartPoint::Big(x)
    }
}

impl From<DyadicStream> for StartPoint {
    fn from(s: DyadicStream) -> Self {
        StartPoint::Dyadic(s)
    }
}

enum Repr<'a> {
    Hardware { dist_start: f64 },
    Big { x: &'a Float, start: &'a Float, start_f64: f64 },
    Dyadic { stream: &'a DyadicStream },
}

/// Both operands are correctly rounded values in `[-1, 1]`, so an `f64`
/// difference is off by at most a few `2^-53`.
const SCREEN_SLOP: f64 = 1e-15;

/// The point `x_j = f^j(x_0)` handed to an [`Observer`].
pub struct OrbitPoint<'a> {
    pub step: usize,
    /// `x_j` rounded to `f64`.
    pub value: f64,
    /// Half-width of the near-tie window for radius comparisons.
    pub tie_margin: f64,
    repr: Repr<'a>,
}

impl OrbitPoint<'_> {
    /// `d(x_j, x_0)` at working precision, rounded to `f64`.
    pub fn distance_to_start(&self) -> f64 {
        match &self.repr {
            Repr::Hardware { dist_start } => *dist_start,
            Repr::Big { x, start, .. } => Float::with_val(start.prec().max(x.prec()), *x - *start).abs().to_f64(),
            Repr::Dyadic { stream } => stream.exact_distance(self.step, 0),
        }
    }

    /// `d(x_j, x_0)` if it may be `<= r`; `None` when provably larger.
    ///
    /// Most steps are decided from `f64` values (or 64-bit windows for the
    /// exact-dyadic backend) without touching the full-precision state.
    pub fn distance_to_start_within(&self, r: f64) -> Option<f64> {
        let r = r + self.tie_margin;
        match &self.repr {
            Repr::Hardware { dist_start } => (*dist_start <= r + 4.0 * f64::EPSILON * r).then_some(*dist_start),
            Repr::Big { start_f64, .. } => {
                if (self.value - start_f64).abs() > r + SCREEN_SLOP {
                    None
                } else {
                    Some(self.distance_to_start())
                }
            }
            Repr::Dyadic { stream } => screened_distance(stream, self.step, r),
        }
    }

    /// `d(x_j, center)` at working precision, rounded to `f64`.
    pub fn distance_to(&self, center: f64) -> f64 {
        match &self.repr {
            Repr::Big { x, .. } => Float::with_val(x.prec().max(64), *x - center).abs().to_f64(),
            Repr::Hardware { .. } => (self.value - center).abs(),
            Repr::Dyadic { stream } => stream.distance_to(self.step, center),
        }
    }

    pub fn big(&self) -> Option<&Float> {
        match &self.repr {
            Repr::Big { x, .. } => Some(x),
            _ => None,
        }
    }
}

/// Per-step callback for [`iterate_stream`].
pub trait Observer {
    /// Smallest radius the observer compares distances against. It sets the
    /// precision-abort threshold `radius / abort_divisor`.
    fn min_radius(&self) -> f64 {
        0.0
    }

    fn observe(&mut self, point: &OrbitPoint<'_>);
}

impl<F: FnMut(&OrbitPoint<'_>)> Observer for F {
    fn observe(&mut self, point: &OrbitPoint<'_>) {
        self(point)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitSummary {
    pub steps: usize,
    pub final_value: f64,
    /// Largest error estimate seen, as a base-2 logarithm (`-inf` when exact).
    pub log2_max_error: f64,
    pub initial_bits: u32,
}

fn log2_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (1.0 + (lo - hi).exp2()).log2()
}

/// Propagates an absolute error bound `2^log2_err` around `x` through one step.
fn propagate(kind: MapKind, x: f64, log2_err: f64) -> f64 {
    if log2_err == f64::NEG_INFINITY {
        return log2_err;
    }
    let err = log2_err.exp2();
    match kind {
        MapKind::Doubling => log2_err + 1.0,
        MapKind::Beta { beta } => log2_err + beta.log2(),
        MapKind::Logistic => {
            let lip = ((4.0 - 8.0 * x).abs() + 8.0 * err).min(4.0);
            log2_err + lip.log2()
        }
        MapKind::MannevillePomeau { gamma } => {
            let lip = if x - err >= 0.5 {
                2.0
            } else if x + err < 0.5 {
                1.0 + (1.0 + gamma) * (2.0 * (x + err)).min(1.0).powf(gamma)
            } else {
                2.0 + gamma
            };
            log2_err + lip.log2()
        }
        MapKind::Cusp => {
            let ax = x.abs();
            if ax > 0.0 && log2_err < ax.log2() - 1.0 {
                // |f'| <= (|x| - err)^(-1/2) on the error interval
                log2_err - 0.5 * (ax - err).log2()
            } else {
                // 2 sqrt is 1/2-Hoelder with constant 2
                1.0 + 0.5 * log2_err
            }
        }
        MapKind::Gauss => {
            if x > 0.0 && log2_err < x.log2() - 1.0 {
                log2_err - 2.0 * (x - err).log2()
            } else {
                f64::INFINITY
            }
        }
    }
}

/// Iterates `map` from `x0` for `n` steps, calling `observer` with each `x_j`.
///
/// Under BigFixed the working precision starts at the policy's bit count and is
/// shed at the budgeted rate (bits lost per step), so late steps run on short
/// mantissas. A running bound on the absolute error (local Lipschitz constants
/// plus rounding) aborts the orbit as soon as it exceeds the threshold.
pub fn iterate_stream<O: Observer + ?Sized>(
    map: &MapModel,
    x0: &StartPoint,
    n: usize,
    policy: &PrecisionPolicy,
    observer: &mut O,
) -> Result<OrbitSummary> {
    policy.validate(map)?;
    if !map.contains(x0.approx()) {
        return Err(Error::Domain {
            map: map.name().to_string(),
            x: x0.approx(),
            lo: map.domain.0,
            hi: map.domain.1,
        });
    }
    let r_min = observer.min_radius();
    let floor = -(policy.slack_bits as f64);
    let log2_threshold = if r_min > 0.0 {
        (r_min / policy.abort_divisor).log2().max(floor)
    } else {
        floor
    };
    let tie_margin = policy.tie_margin();

    match (policy.kind, x0) {
        (PrecisionKind::ExactDyadic, StartPoint::Dyadic(stream)) => {
            for step in 1..=n {
                let point = OrbitPoint {
                    step,
                    value: stream.value_f64(step),
                    tie_margin,
                    repr: Repr::Dyadic { stream },
                };
                observer.observe(&point);
            }
            Ok(OrbitSummary {
                steps: n,
                final_value: stream.value_f64(n),
                log2_max_error: f64::NEG_INFINITY,
                initial_bits: stream.len() as u32,
            })
        }
        (PrecisionKind::ExactDyadic, _) => Err(Error::Contract(
            "exact_dyadic orbits need a dyadic start point".into(),
        )),
        (PrecisionKind::Hardware, start) => {
            let x_start = start.approx();
            let mut x = x_start;
            let mut log2_err = f64::NEG_INFINITY;
            let mut worst = log2_err;
            let rounding = -52.0;
            for step in 1..=n {
                log2_err = log2_add(propagate(map.kind, x, log2_err), rounding);
                x = map.step_f64(x);
                worst = worst.max(log2_err);
                if log2_err > log2_threshold {
                    return Err(Error::PrecisionAbort {
                        step,
                        log2_error: log2_err,
                        log2_threshold,
                    });
                }
                let point = OrbitPoint {
                    step,
                    value: x,
                    tie_margin,
                    repr: Repr::Hardware {
                        dist_start: (x - x_start).abs(),
                    },
                };
                observer.observe(&point);
            }
            Ok(OrbitSummary {
                steps: n,
                final_value: x,
                log2_max_error: worst,
                initial_bits: 53,
            })
        }
        (PrecisionKind::BigFixed { bits }, start) => {
            let start_big = match start {
                StartPoint::Big(f) => {
                    let mut f = f.clone();
                    f.set_prec(bits);
                    f
                }
                StartPoint::F64(v) => Float::with_val(bits, *v),
                StartPoint::Dyadic(s) => s.to_float(0, bits),
            };
            let budget = required_bits(map, n.max(1), policy.slack_bits);
            let shed_rate = budget.bits_per_step;
            let min_prec = 64 + policy.slack_bits;
            let mut kernel = BigKernel::new(map, bits);
            let mut x = start_big.clone();
            let start_f64 = start_big.to_f64();
            let mut prec = bits;
            let mut log2_err = f64::NEG_INFINITY;
            let mut worst = log2_err;
            for step in 1..=n {
                let target = (bits as f64 - shed_rate * step as f64).max(min_prec as f64) as u32;
                let mut rounding = -(prec as f64) + 2.0;
                if target + 64 <= prec {
                    prec = target;
                    x.set_prec(prec);
                    kernel.truncate(prec);
                    rounding = log2_add(rounding, -(prec as f64));
                }
                let xf = x.to_f64();
                log2_err = log2_add(propagate(map.kind, xf, log2_err), rounding);
                kernel.step(&mut x);
                worst = worst.max(log2_err);
                if log2_err > log2_threshold {
                    return Err(Error::PrecisionAbort {
                        step,
                        log2_error: log2_err,
                        log2_threshold,
                    });
                }
                let point = OrbitPoint {
                    step,
                    value: x.to_f64(),
                    tie_margin,
                    repr: Repr::Big {
                        x: &x,
                        start: &start_big,
                        start_f64,
                    },
                };
                observer.observe(&point);
            }
            Ok(OrbitSummary {
                steps: n,
                final_value: x.to_f64(),
                log2_max_error: worst,
                initial_bits: bits,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn collect(map: &MapModel, x0: &StartPoint, n: usize, policy: &PrecisionPolicy) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        iterate_stream(map, x0, n, policy, &mut |p: &OrbitPoint<'_>| out.push(p.value))?;
        Ok(out)
    }

    #[test]
    fn dyadic_orbit_of_five_eighths() {
        let s = DyadicStream::from_bit_str("101").unwrap();
        let v = collect(&MapModel::doubling(), &s.into(), 4, &PrecisionPolicy::exact_dyadic()).unwrap();
        assert_eq!(v, vec![0.25, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn cusp_fixed_point_stays_put() {
        let prec = 512;
        let mut x0 = Float::with_val(prec, 2u32);
        x0.sqrt_mut();
        x0 *= 2u32;
        let x0 = Float::with_val(prec, 3u32 - x0);
        let policy = PrecisionPolicy::big_fixed(prec);
        let v = collect(&MapModel::cusp(), &x0.clone().into(), 50, &policy).unwrap();
        for y in v {
            assert!((y - x0.to_f64()).abs() < 1e-12);
        }
    }

    #[test]
    fn golden_beta_point_maps_to_zero_then_stays() {
        let bits = 759 + 64;
        let mut b = Float::with_val(bits, 5u32);
        b.sqrt_mut();
        b += 1u32;
        b /= 2u32;
        let x0 = Float::with_val(bits, &b - 1u32);
        let v = collect(&MapModel::golden_beta(), &x0.into(), 20, &PrecisionPolicy::big_fixed(bits)).unwrap();
        // beta (beta - 1) = 1 lands on the cut: 0 or, after rounding, just below 1
        let d0 = v[0].min(1.0 - v[0]);
        assert!(d0 < 1e-200);
    }

    #[test]
    fn hardware_doubling_aborts() {
        struct Small;
        impl Observer for Small {
            fn min_radius(&self) -> f64 {
                2f64.powi(-20)
            }
            fn observe(&mut self, _: &OrbitPoint<'_>) {}
        }
        let err = iterate_stream(
            &MapModel::doubling(),
            &StartPoint::F64(0.123_456_789),
            1000,
            &PrecisionPolicy::hardware(),
            &mut Small,
        )
        .unwrap_err();
        match err {
            Error::PrecisionAbort { step, .. } => assert!(step < 53, "step {step}"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn observer_called_n_times_and_in_domain() {
        let map = MapModel::cusp();
        let mut count = 0;
        let policy = PrecisionPolicy::auto(&map, 300, 64);
        iterate_stream(&map, &StartPoint::F64(0.3), 300, &policy, &mut |p: &OrbitPoint<'_>| {
            count += 1;
            assert!(map.contains(p.value));
        })
        .unwrap();
        assert_eq!(count, 300);
    }

    #[test]
    fn more_bits_do_not_move_points() {
        let map = MapModel::golden_beta();
        let n = 400;
        let base = PrecisionPolicy::auto(&map, n, 64);
        let bits = match base.kind {
            PrecisionKind::BigFixed { bits } => bits,
            _ => unreachable!(),
        };
        let x0 = Float::with_val(bits + 64, 0.377_123_456_7);
        let a = collect(&map, &x0.clone().into(), n, &base).unwrap();
        let b = collect(&map, &x0.into(), n, &PrecisionPolicy::big_fixed(bits + 64)).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 2f64.powi(-64));
        }
    }

    #[test]
    fn domain_checked() {
        let r = collect(&MapModel::doubling(), &StartPoint::F64(1.5), 3, &PrecisionPolicy::hardware());
        assert!(matches!(r, Err(Error::Domain { .. })));
    }
}
