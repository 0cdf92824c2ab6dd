//! Desk-scale acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Discrete, Normal, Poisson};

use recurlab::experiments::{
    check_assumption_a2, run_almost_sure, run_distributional, DensitySource, ExperimentConfig,
};
use recurlab::limitlaw::{closed_form_pmf, density_moment, normalisation, poisson_like_pmf, QuadratureConfig};
use recurlab::maps::{ulam_density, MapModel, UlamOptions, GOLDEN};
use recurlab::orbit::{DyadicStream, PrecisionPolicy, StartPoint};
use recurlab::recurrence::{observe_recurrence, recurrence_count, RecurrenceRequest};
use recurlab::stats::wilson;

/// Writes to the stderr handle directly so lines survive libtest output capture.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stderr(), $($t)*);
    }};
}

struct Verdict {
    id: u32,
    pass: bool,
    detail: String,
}

fn report(id: u32, pass: bool, detail: String) -> Verdict {
    say!("criterion {id}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
    Verdict { id, pass, detail }
}

fn config(map: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.map.name = map.into();
    c
}

fn criterion_1() -> Verdict {
    let r = run_distributional(&config("doubling")).unwrap();
    let mut worst_dev: f64 = 0.0;
    let mut worst_tv: f64 = 0.0;
    for (t, &tau) in r.pmf.tau_grid.iter().enumerate() {
        let poi = Poisson::new(tau).unwrap();
        for k in 0..=4u64 {
            worst_dev = worst_dev.max((r.pmf.phat(t, k as usize) - poi.pmf(k)).abs());
        }
        worst_tv = worst_tv.max(r.per_tau[t].tv_distance);
    }
    report(
        1,
        worst_dev <= 0.015 && worst_tv <= 0.02 && !r.aborts.failed,
        format!(
            "doubling n=4096 samples=20000 {}: max |phat-Poisson| over k<=4 = {worst_dev:.4} (<= 0.015), max TV = {worst_tv:.4} (<= 0.02)",
            r.policy
        ),
    )
}

fn golden_literal(tau: f64, k: u64) -> f64 {
    let b = GOLDEN;
    let l1 = b.powi(3) * tau / (b * b + 1.0);
    let l2 = b * b * tau / (b * b + 1.0);
    let f = |l: f64| Poisson::new(l).unwrap().pmf(k);
    f(l1) / b + f(l2) / (b * b)
}

fn criterion_2() -> Verdict {
    let mut c = config("beta");
    c.tau_grid = vec![1.0];
    c.k_max = 6;
    let r = run_distributional(&c).unwrap();
    let map = MapModel::golden_beta();
    let mut dev: f64 = 0.0;
    let mut literal_dev: f64 = 0.0;
    for k in 0..=3u64 {
        let p = r.pmf.phat(0, k as usize);
        dev = dev.max((p - closed_form_pmf(&map, 1.0, k).unwrap()).abs());
        literal_dev = literal_dev.max((p - golden_literal(1.0, k)).abs());
    }
    say!(
        "  golden beta: two-term formula with Lebesgue weights 1/beta, 1/beta^2 deviates by {literal_dev:.4}; mu-weighted form deviates by {dev:.4}"
    );
    report(
        2,
        dev <= 0.02 && !r.aborts.failed,
        format!(
            "golden beta n=4096 samples=20000 {} tau=1: max |phat-G| over k<=3 = {dev:.4} (<= 0.02), excluded={} retries={}",
            r.policy, r.aborts.excluded, r.aborts.retries
        ),
    )
}

fn criterion_3() -> Verdict {
    let mut c = config("cusp");
    c.tau_grid = vec![2.0];
    let r = run_distributional(&c).unwrap();
    let p0 = r.pmf.phat(0, 0);
    let mc_ok = (p0 - 0.29699708).abs() <= 0.02 && !r.aborts.failed;
    let map = MapModel::cusp();
    let g20 = closed_form_pmf(&map, 20.0, 0).unwrap() * 400.0 / 2.0;
    let tail_ok = (0.99..=1.0).contains(&g20);
    let cfg = QuadratureConfig::default();
    let mut quad_dev: f64 = 0.0;
    for tau in [0.5, 1.0, 2.0, 4.0, 8.0, 20.0] {
        for k in 0..=8 {
            let q = poisson_like_pmf(&map.density, tau, k, &cfg).unwrap().value;
            quad_dev = quad_dev.max((q - closed_form_pmf(&map, tau, k).unwrap()).abs());
        }
    }
    report(
        3,
        mc_ok && tail_ok && quad_dev <= 1e-8,
        format!(
            "cusp tau=2 phat(0) = {p0:.4} vs 0.29699708 (+-0.02, excluded={} retries={}); G(20,0)*200 = {g20:.8}; max |quadrature-closed form| = {quad_dev:.2e}",
            r.aborts.excluded, r.aborts.retries
        ),
    )
}

fn criterion_4(mp_ulam: &MapModel) -> Verdict {
    let cfg = QuadratureConfig::default();
    let maps = [
        MapModel::doubling(),
        MapModel::golden_beta(),
        MapModel::gauss(),
        MapModel::cusp(),
        MapModel::logistic(),
        mp_ulam.clone(),
    ];
    let taus = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];
    let mut norm_dev: f64 = 0.0;
    let mut mean_dev: f64 = 0.0;
    let mut skipped = Vec::new();
    for map in &maps {
        let sup = map.density.sup().unwrap();
        let rho2 = sup.is_finite().then(|| density_moment(&map.density, 2.0, &cfg).unwrap().value);
        if rho2.is_none() {
            skipped.push(map.density.id.clone());
        }
        for tau in taus {
            let n = normalisation(&map.density, tau, 64, &cfg).unwrap();
            let total = if sup.is_finite() {
                n.partial_sum
            } else {
                n.partial_sum + n.tail_bound
            };
            norm_dev = norm_dev.max((total - 1.0).abs());
            if let Some(r2) = rho2 {
                mean_dev = mean_dev.max((n.partial_mean - tau * r2).abs());
            }
        }
    }
    // independent values for the two exact cases
    let mut exact_dev: f64 = 0.0;
    for tau in taus {
        let d = normalisation(&MapModel::doubling().density, tau, 64, &cfg).unwrap();
        let c = normalisation(&MapModel::cusp().density, tau, 64, &cfg).unwrap();
        exact_dev = exact_dev
            .max((d.partial_mean - tau).abs())
            .max((c.partial_mean - 2.0 * tau / 3.0).abs());
    }
    report(
        4,
        norm_dev <= 1e-6 && mean_dev <= 1e-6 && exact_dev <= 1e-6,
        format!(
            "{} densities x {} taus: max |sum G - 1| = {norm_dev:.2e}, max |sum kG - tau int rho^2| = {mean_dev:.2e}, doubling/cusp exact means {exact_dev:.2e}; mean identity not applicable to {skipped:?} (int rho^2 diverges)",
            maps.len(),
            taus.len()
        ),
    )
}

fn criterion_5() -> Verdict {
    let r = run_almost_sure(&config("doubling")).unwrap();
    let rows = &r.rows;
    let last = rows.last().unwrap();
    let tail = &rows[rows.len() - 3..];
    let nonincreasing = tail.windows(2).all(|w| w[1].viol_upper_freq <= w[0].ci_upper.hi);
    let freqs: Vec<String> = tail.iter().map(|t| format!("{:.4}", t.viol_upper_freq)).collect();
    report(
        5,
        last.viol_upper_freq <= 0.03
            && nonincreasing
            && last.viol_lower_freq <= 0.02
            && r.inconsistent_paths == 0
            && !r.aborts.failed,
        format!(
            "doubling c=1 paths=2000 n_k=floor(1.5^k) to {}: upper violation {:.4} (<= 0.03), last three {freqs:?} nonincreasing within CI = {nonincreasing}; lower violation {:.4} (<= 0.02)",
            last.n_k, last.viol_upper_freq, last.viol_lower_freq
        ),
    )
}

fn criterion_6() -> Verdict {
    let c = config("doubling");
    let rep = check_assumption_a2(&c, c.a2.a_exponent).unwrap();
    let fixed: Vec<_> = rep.entries.iter().filter(|e| e.n == 0 && e.j <= 10).collect();
    // family-wise 99% over all compared entries
    let m = fixed.len() as f64;
    let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(1.0 - 0.01 / (2.0 * m));
    let misses_family = fixed
        .iter()
        .filter(|e| !wilson(e.hits, e.trials, z).contains(e.oracle.unwrap()))
        .count();
    let misses_pointwise = fixed.iter().filter(|e| !e.ci.contains(e.oracle.unwrap())).count();
    let stated_misses = fixed
        .iter()
        .filter(|e| {
            let nn = (e.j as f64).exp2();
            let stated = (2.0 * e.r * nn / (nn - 1.0)).min(1.0);
            !wilson(e.hits, e.trials, z).contains(stated)
        })
        .count();
    say!(
        "  return-measure oracle: the form min(1, 2r 2^j/(2^j-1)) falls outside the family-wise interval in {stated_misses}/{} entries; exact branch count used",
        fixed.len()
    );
    let beta = rep.fitted_beta0.unwrap_or(f64::NAN);
    report(
        6,
        misses_family == 0 && (0.9..=1.1).contains(&beta) && !rep.aborts.failed,
        format!(
            "doubling samples={} r in {{1e-2,1e-3}} j<=10: {misses_family}/{} outside family-wise 99% CI (z={z:.3}), {misses_pointwise} outside pointwise 99% CI; fitted beta0 = {beta:.4} (a={})",
            rep.samples,
            fixed.len(),
            rep.a_exponent
        ),
    )
}

fn criterion_7() -> (Verdict, MapModel) {
    let cusp = MapModel::cusp();
    let u = ulam_density(&cusp, &UlamOptions::new(4096), &PrecisionPolicy::hardware()).unwrap();
    let b = u.binned().unwrap();
    let w = b.width();
    // exact bin averages of (1 - x)/2
    let l1: f64 = (0..b.bins())
        .map(|i| {
            let mid = b.lo + (i as f64 + 0.5) * w;
            (b.values[i] - (1.0 - mid) / 2.0).abs() * w
        })
        .sum();

    let mut c = config("mp");
    c.map.gamma = Some(0.25);
    c.density.source = DensitySource::Ulam;
    c.samples = 5000;
    c.tau_grid = vec![1.0];
    let mp = c.build_map().unwrap();
    let r = run_distributional(&c).unwrap();
    let mut dev: f64 = 0.0;
    for k in 0..=2u64 {
        dev = dev.max((r.pmf.phat(0, k as usize) - r.theory.values[0][k as usize]).abs());
    }
    let v = report(
        7,
        l1 <= 0.01 && dev <= 0.03 && !r.aborts.failed,
        format!(
            "cusp Ulam 4096 bins L1 = {l1:.2e} (<= 0.01); MP(0.25) Ulam density, n=4096 samples=5000 {} tau=1: max |phat-G| over k<=2 = {dev:.4} (<= 0.03), excluded={} retries={}",
            r.policy, r.aborts.excluded, r.aborts.retries
        ),
    );
    (v, mp)
}

fn criterion_8() -> Verdict {
    let map = MapModel::doubling();
    let n = 1000;
    let radii: Vec<f64> = (4..=20).rev().map(|e| (-(e as f64)).exp2()).collect();
    let req = RecurrenceRequest {
        n,
        radii: radii.clone(),
        record_hits: true,
        ..RecurrenceRequest::default()
    };
    let big = PrecisionPolicy::auto(&map, n, 64);
    let mut mismatches = 0;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stream = DyadicStream::random(&mut rng, n + 128);
        let f = stream.to_float(0, (n + 128) as u32);
        let a = observe_recurrence(&map, &StartPoint::Dyadic(stream), &req, &PrecisionPolicy::exact_dyadic()).unwrap();
        let b = observe_recurrence(&map, &StartPoint::Big(f), &req, &big).unwrap();
        if a.counts != b.counts || a.hit_times != b.hit_times {
            mismatches += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x0: f64 = rand::Rng::gen(&mut rng);
    let hw = recurrence_count(&map, &StartPoint::F64(x0), n, &radii, &PrecisionPolicy::hardware());
    let aborted = matches!(&hw, Err(e) if e.is_precision_abort());
    report(
        8,
        mismatches == 0 && aborted,
        format!(
            "200 doubling orbits n=1000, 17 radii 2^-4..2^-20: {mismatches} disagreements between exact dyadic and BigFixed; hardware run aborts = {aborted} ({})",
            hw.err().map(|e| e.to_string()).unwrap_or_default()
        ),
    )
}

fn criterion_9() -> Verdict {
    let mut c = config("doubling");
    let mut outputs = Vec::new();
    for workers in [1, 8] {
        c.workers = workers;
        let r = run_distributional(&c).unwrap();
        let mut buf = Vec::new();
        r.write_pmf_csv(&mut buf).unwrap();
        outputs.push(buf);
    }
    report(
        9,
        outputs[0] == outputs[1],
        format!(
            "doubling samples=20000 workers 1 vs 8: pmf.csv byte-identical = {} ({} bytes)",
            outputs[0] == outputs[1],
            outputs[0].len()
        ),
    )
}

#[test]
fn acceptance() {
    let mut verdicts = vec![criterion_1(), criterion_2(), criterion_3()];
    let (v7, mp) = criterion_7();
    verdicts.push(criterion_4(&mp));
    verdicts.push(criterion_5());
    verdicts.push(criterion_6());
    verdicts.push(v7);
    verdicts.push(criterion_8());
    verdicts.push(criterion_9());
    verdicts.sort_by_key(|v| v.id);
    say!("summary:");
    for v in &verdicts {
        say!("criterion {}: {}", v.id, if v.pass { "PASS" } else { "FAIL" });
    }
    let failed: Vec<String> = verdicts
        .iter()
        .filter(|v| !v.pass)
        .map(|v| format!("{}: {}", v.id, v.detail))
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:#?}");
}
