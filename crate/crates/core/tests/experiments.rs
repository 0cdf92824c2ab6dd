use proptest::prelude::*;

use recurlab::experiments::{run_distributional, ExperimentConfig, PrecisionChoice};
use recurlab::orbit::{guard_bits, required_bits};
use recurlab::maps::MapModel;

fn base(map: &str, n: usize, samples: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.map.name = map.into();
    c.n = n;
    c.samples = samples;
    c
}

#[test]
fn empirical_mean_tracks_intensity() {
    for map in ["doubling", "cusp"] {
        let r = run_distributional(&base(map, 4096, 2000)).unwrap();
        for t in &r.per_tau {
            let theory = t.theory_mean.unwrap();
            let allowance = 4.0 * t.std / (r.pmf.samples as f64).sqrt() + 0.01;
            assert!((t.mean - theory).abs() <= allowance, "{map} tau={} {} vs {theory}", t.tau, t.mean);
        }
    }
}

#[test]
fn dyadic_and_big_fixed_runs_agree() {
    let n = 1024;
    let exact = base("doubling", n, 100);
    let mut big = exact.clone();
    big.precision.kind = PrecisionChoice::BigFixed;
    let budget = required_bits(&MapModel::doubling(), n, big.precision.slack_bits);
    big.precision.bits = Some(budget.bits_required + guard_bits(n));
    let a = run_distributional(&exact).unwrap();
    let b = run_distributional(&big).unwrap();
    assert_eq!(a.policy, "exact_dyadic");
    assert!(b.policy.starts_with("big_fixed"));
    assert_eq!(a.pmf.counts, b.pmf.counts);
}

#[test]
fn vanishing_intensity_never_returns() {
    let mut c = base("doubling", 4096, 2000);
    c.tau_grid = vec![0.001];
    let r = run_distributional(&c).unwrap();
    assert!(r.pmf.phat(0, 0) >= 0.99);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn buckets_partition_samples(seed in any::<u64>(), samples in 100usize..300, k_max in 0u64..5, map_ix in 0usize..3) {
        let map = ["doubling", "beta", "logistic"][map_ix];
        let mut c = base(map, 128, samples);
        c.seed = seed;
        c.k_max = k_max;
        let r = run_distributional(&c).unwrap();
        for (row, cis) in r.pmf.counts.iter().zip(&r.pmf.wilson_ci) {
            prop_assert_eq!(row.len() as u64, k_max + 2);
            prop_assert_eq!(row.iter().sum::<u64>(), samples as u64 - r.aborts.excluded);
            for ci in cis {
                prop_assert!(0.0 <= ci.lo && ci.lo <= ci.hi && ci.hi <= 1.0);
            }
        }
        for t in &r.per_tau {
            prop_assert!((0.0..=1.0).contains(&t.tv_distance));
        }
    }
}
