use rand::Rng;
use rug::{Float, Integer};

use super::{MapKind, MapModel};

/// Burn-in length for maps sampled by forward iteration.
pub const DEFAULT_BURN_IN: usize = 10_000;

/// Draws `x ~ mu` in hardware precision.
///
/// Closed-form densities use the inverse CDF. Otherwise (including Ulam or
/// histogram estimates) a Lebesgue-uniform seed is iterated `burn_in` times.
pub fn sample_invariant<R: Rng + ?Sized>(map: &MapModel, rng: &mut R, burn_in: usize) -> f64 {
    let u: f64 = rng.gen();
    if map.density.pieces().is_some() {
        if let Ok(x) = map.density.inverse_cdf(u) {
            return x;
        }
    }
    burn_in_from(map, u, burn_in)
}

fn burn_in_from(map: &MapModel, u: f64, burn_in: usize) -> f64 {
    let (lo, hi) = map.domain;
    let mut x = lo + (hi - lo) * u;
    for _ in 0..burn_in {
        x = map.step_f64(x);
    }
    x
}

/// Uniform random number in `[0, 1)` carrying `prec` random bits.
pub fn random_unit_big<R: Rng + ?Sized>(rng: &mut R, prec: u32) -> Float {
    let limbs = (prec as usize).div_ceil(64);
    let words: Vec<u64> = (0..limbs).map(|_| rng.gen()).collect();
    let mut int = Integer::from_digits(&words, rug::integer::Order::Lsf);
    let extra = limbs as u32 * 64 - prec;
    int >>= extra;
    let mut f = Float::with_val(prec, int);
    f >>= prec;
    f
}

/// Draws `x ~ mu` with `prec` significant random bits.
///
/// Closed forms invert the CDF at full precision. Maps without one take the
/// hardware burn-in endpoint and fill the bits below `2^-60` with fresh
/// randomness, so the orbit does not start on a short dyadic rational.
pub fn sample_invariant_big<R: Rng + ?Sized>(
    map: &MapModel,
    rng: &mut R,
    prec: u32,
    burn_in: usize,
) -> Float {
    let u = random_unit_big(rng, prec);
    if map.density.pieces().is_some() {
        let golden_cut = map.is_golden_beta();
        let boundary = move |i: usize| -> Option<Float> {
            if golden_cut && i == 1 {
                // 1/beta = beta - 1 = (sqrt 5 - 1) / 2
                let mut c = Float::with_val(prec, 5u32);
                c.sqrt_mut();
                c -= 1u32;
                c /= 2u32;
                Some(c)
            } else {
                None
            }
        };
        if let Ok(x) = map.density.inverse_cdf_big(&u, &boundary) {
            return x;
        }
    }
    let x = burn_in_from(map, u.to_f64(), burn_in);
    let mut low = random_unit_big(rng, prec);
    low >>= 60;
    let mut out = Float::with_val(prec, x);
    match map.kind {
        // keep away from the right end of [0, 1]
        MapKind::MannevillePomeau { .. } | MapKind::Beta { .. } if x > 0.5 => out -= low,
        _ => out += low,
    }
    let (lo, hi) = map.domain;
    out.clamp(&lo, &hi)
}
