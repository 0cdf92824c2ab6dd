use rand::Rng;

use super::{BinnedDensity, DensityModel, MapModel};
use crate::error::{Error, Result};

/// Relative size of the jitter added after each hardware step.
const JITTER: f64 = 1.0 / (1u64 << 40) as f64;

/// Occupation histogram of `chains` hardware orbits of `steps` points each,
/// after `burn_in` discarded steps.
///
/// Every step adds a uniform jitter of `2^-40` of the domain length, reflected
/// at the ends. Without it `f64` orbits of the doubling and golden beta maps
/// collapse onto short dyadic cycles within a few dozen steps.
pub fn histogram_density<R: Rng + ?Sized>(
    map: &MapModel,
    bins: usize,
    chains: usize,
    steps: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<DensityModel> {
    if bins < 16 {
        return Err(Error::Contract(format!("histogram needs at least 16 bins, got {bins}")));
    }
    if chains == 0 || steps == 0 {
        return Err(Error::Contract("histogram needs at least one point".into()));
    }
    let (lo, hi) = map.domain;
    let len = hi - lo;
    let mut counts = vec![0u64; bins];
    let w = len / bins as f64;
    for _ in 0..chains {
        let mut x = lo + len * rng.gen::<f64>();
        for t in 0..burn_in + steps {
            x = map.step_f64(x) + len * JITTER * rng.gen::<f64>();
            if x > hi {
                x = 2.0 * hi - x;
            }
            if t >= burn_in {
                let i = ((x - lo) / w) as usize;
                counts[i.min(bins - 1)] += 1;
            }
        }
    }
    let total = (chains * steps) as f64;
    let values = counts.iter().map(|c| *c as f64 / (total * w)).collect();
    Ok(DensityModel::histogram(
        format!("histogram:{bins}:{}", map.name()),
        BinnedDensity { lo, hi, values },
    ))
}
