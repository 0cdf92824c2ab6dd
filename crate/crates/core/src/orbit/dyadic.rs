//! Exact orbits of the doubling map on dyadic rationals.
//!
//! `f^j` shifts the binary expansion left by `j` places, so an orbit is a view
//! into a fixed bit string. Distances are screened with 64-bit windows and only
//! confirmed at full length when the screen cannot decide.

use rand::Rng;
use rug::{Float, Integer};

use crate::error::{Error, Result};

/// Binary expansion `0.b_1 b_2 ... b_len`, most significant bit first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DyadicStream {
    limbs: Vec<u64>,
    len: usize,
}

impl DyadicStream {
    pub fn from_limbs(mut limbs: Vec<u64>, len: usize) -> Self {
        limbs.resize(len.div_ceil(64), 0);
        if len % 64 != 0 {
            if let Some(last) = limbs.last_mut() {
                *last &= !0u64 << (64 - len % 64);
            }
        }
        Self { limbs, len }
    }

    /// Parses a string of `0`/`1` digits (the bits after the binary point).
    pub fn from_bit_str(bits: &str) -> Result<Self> {
        let mut limbs = vec![0u64; bits.len().div_ceil(64)];
        for (i, c) in bits.chars().enumerate() {
            match c {
                '0' => {}
                '1' => limbs[i / 64] |= 1 << (63 - i % 64),
                other => return Err(Error::Contract(format!("invalid bit `{other}`"))),
            }
        }
        Ok(Self { limbs, len: bits.len() })
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Self {
        let limbs = (0..len.div_ceil(64)).map(|_| rng.gen()).collect();
        Self::from_limbs(limbs, len)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// 64 bits starting after `offset`, zero beyond the end of the stream.
    pub fn window64(&self, offset: usize) -> u64 {
        let idx = offset / 64;
        let sh = offset % 64;
        let hi = self.limbs.get(idx).copied().unwrap_or(0);
        if sh == 0 {
            return hi;
        }
        let lo = self.limbs.get(idx + 1).copied().unwrap_or(0);
        (hi << sh) | (lo >> (64 - sh))
    }

    /// Value of `f^offset(x)` rounded to `f64`.
    pub fn value_f64(&self, offset: usize) -> f64 {
        self.window64(offset) as f64 * (-64f64).exp2()
    }

    /// Bits after `offset` as an integer `I` with `f^offset(x) = I / 2^(len - offset)`.
    fn integer_at(&self, offset: usize) -> Integer {
        if offset >= self.len {
            return Integer::new();
        }
        let mut int = Integer::from_digits(&self.limbs, rug::integer::Order::Msf);
        let total = self.limbs.len() * 64;
        int >>= (total - self.len) as u32;
        let keep = (self.len - offset) as u32;
        int.keep_bits_mut(keep);
        int
    }

    pub fn to_float(&self, offset: usize, prec: u32) -> Float {
        let bits = self.len.saturating_sub(offset) as u32;
        let mut f = Float::with_val(prec.max(bits.max(1)), self.integer_at(offset));
        f >>= bits;
        if f.prec() != prec {
            f.set_prec(prec);
        }
        f
    }

    /// `|f^a(x) - f^b(x)|` computed exactly, then rounded to `f64`.
    pub fn exact_distance(&self, a: usize, b: usize) -> f64 {
        let (ia, ib) = (self.integer_at(a), self.integer_at(b));
        // bring both to the common denominator 2^(len - min(a, b))
        let la = self.len.saturating_sub(a);
        let lb = self.len.saturating_sub(b);
        let l = la.max(lb);
        let diff = (ia << (l - la) as u32) - (ib << (l - lb) as u32);
        let mut f = Float::with_val(64, diff.abs());
        f >>= l as u32;
        f.to_f64()
    }

    /// `|f^j(x) - c|` for a centre given in `f64`, exact before the final rounding.
    pub fn distance_to(&self, j: usize, center: f64) -> f64 {
        let bits = self.len.saturating_sub(j) as u32;
        let x = self.to_float(j, bits.max(64) + 64);
        Float::with_val(x.prec(), &x - center).abs().to_f64()
    }
}

/// The `width` bits following position `offset` as an unsigned integer.
pub fn dyadic_window(bits: &DyadicStream, offset: usize, width: u32) -> Result<u64> {
    if width == 0 || width > 64 {
        return Err(Error::Contract(format!("window width must lie in 1..=64, got {width}")));
    }
    if offset + width as usize > bits.len() {
        return Err(Error::OutOfRange {
            index: offset + width as usize,
            len: bits.len(),
        });
    }
    Ok(bits.window64(offset) >> (64 - width))
}

/// Screening threshold for the 64-bit window test at radius `r`.
pub(crate) fn window_threshold(r: f64) -> u128 {
    let scaled = (r * 2f64.powi(64)).ceil();
    if scaled >= 2f64.powi(100) {
        u128::MAX
    } else {
        scaled as u128 + 1
    }
}

/// `None` when the windows prove `d(f^j x, x) > r`, else the exact distance.
pub(crate) fn screened_distance(stream: &DyadicStream, j: usize, r: f64) -> Option<f64> {
    let w0 = stream.window64(0);
    let wj = stream.window64(j);
    if (w0.abs_diff(wj) as u128) > window_threshold(r) {
        None
    } else {
        Some(stream.exact_distance(j, 0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn window_examples() {
        let s = DyadicStream::from_bit_str("101000").unwrap();
        assert_eq!(dyadic_window(&s, 1, 3).unwrap(), 0b010);
        let five_eighths = DyadicStream::from_bit_str("10100000").unwrap();
        assert_eq!(dyadic_window(&five_eighths, 2, 3).unwrap(), 0b100);
    }

    #[test]
    fn window_out_of_range() {
        let s = DyadicStream::from_bit_str("101").unwrap();
        assert!(matches!(dyadic_window(&s, 2, 3), Err(Error::OutOfRange { .. })));
        assert!(dyadic_window(&s, 0, 0).is_err());
    }

    #[test]
    fn exact_distance_small_cases() {
        // x = 5/8: orbit 1/4, 1/2, 0
        let s = DyadicStream::from_bit_str("101").unwrap();
        assert_eq!(s.exact_distance(1, 0), 3.0 / 8.0);
        assert_eq!(s.exact_distance(2, 0), 1.0 / 8.0);
        assert_eq!(s.exact_distance(3, 0), 5.0 / 8.0);
        assert_eq!(s.value_f64(1), 0.25);
        assert_eq!(s.to_float(2, 128).to_f64(), 0.5);
    }

    #[test]
    fn screen_never_rejects_a_true_hit() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let s = DyadicStream::random(&mut rng, 1064);
            for j in 1..=1000 {
                let exact = s.exact_distance(j, 0);
                for k in 4..=40 {
                    let r = (-(k as f64)).exp2();
                    match screened_distance(&s, j, r) {
                        None => assert!(exact > r),
                        Some(d) => assert_eq!(d, exact),
                    }
                }
            }
        }
    }

    #[test]
    fn float_conversion_matches_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = DyadicStream::random(&mut rng, 300);
        for j in [0, 1, 17, 64, 65, 200, 299, 300] {
            let f = s.to_float(j, 400);
            assert_eq!(f.to_f64(), s.value_f64(j), "offset {j}");
        }
    }
}
