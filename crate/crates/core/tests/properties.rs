//! Statistical and structural properties that need many paths or span
//! several modules.

use harnack_lab::bounds::{self, GapPair};
use harnack_lab::coefficients::{audit_assumptions, builtin_system, AssumptionConstants, CoefficientSet, SamplingBox, SystemParams};
use harnack_lab::coupling::{simulate_coupled_q, Coupling, GammaSchedule};
use harnack_lab::estimators::{
    check_entropy, check_martingale, estimate_pt_f, MCEstimate, PathFunctional, TestFunction, Tolerances, Verdict,
};
use harnack_lab::integrator::simulate_path;
use harnack_lab::segment::{GridSpec, SegmentPath};
use proptest::prelude::*;
use rayon::prelude::*;

fn system(name: &str, pairs: &[(&str, f64)]) -> CoefficientSet {
    let params: SystemParams = pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    builtin_system(name, &params).unwrap()
}

fn catalog() -> Vec<CoefficientSet> {
    vec![
        system("linear_additive", &[("a", -1.0), ("c", 0.5), ("s0", 1.0)]),
        system("sine_multiplicative", &[("a", -1.0), ("c", 0.2), ("s0", 0.1)]),
        system("ou_nodelay", &[("a", 1.0), ("s0", 1.0)]),
    ]
}

fn constant(v: f64, m: usize) -> SegmentPath {
    SegmentPath::constant(&[v], 1.0, m).unwrap()
}

fn endpoints(paths: &[f64]) -> (f64, f64, f64) {
    let n = paths.len() as f64;
    let mean = paths.iter().sum::<f64>() / n;
    let var = paths.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var, (var / n).sqrt())
}

#[test]
fn catalog_systems_pass_their_own_audit() {
    for coeffs in catalog() {
        let report = audit_assumptions(&coeffs, &SamplingBox::new(2.0, 1.0, 20), 100_000, 9, 1e-6).unwrap();
        assert!(report.all_pass(), "{}: {:?}", coeffs.label(), report.conditions);
    }
}

#[test]
fn brownian_motion_has_the_right_moments() {
    let bm = system("ou_nodelay", &[("a", 0.0), ("s0", 1.0)]);
    let grid = GridSpec::new(1.0, 2.0, 20).unwrap();
    let xi = constant(0.0, 20);
    let n = 100_000;
    let ends: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|i| simulate_path(&bm, &xi, &grid, 21, i).unwrap().endpoint()[0])
        .collect();
    let (mean, var, se) = endpoints(&ends);
    let t = grid.t_end();
    assert!(mean.abs() <= 4.0 * se, "mean {mean} se {se}");
    let var_se = t * (2.0 / (n as f64 - 1.0)).sqrt();
    assert!((var - t).abs() <= 5.0 * var_se, "variance {var} vs {t}");
}

#[test]
fn estimates_do_not_depend_on_thread_count() {
    let coeffs = system("sine_multiplicative", &[("a", -1.0), ("c", 0.2), ("s0", 0.1)]);
    let grid = GridSpec::new(1.0, 2.0, 40).unwrap().with_t0(1.0).unwrap();
    let (xi, eta) = (constant(1.0, 40), constant(0.0, 40));
    let f = TestFunction::by_name("one_plus_capped_square", 100.0, 1.0).unwrap();
    let coupling = Coupling::new(GammaSchedule::new(1.0, coeffs.constants().k4, 1.0).unwrap());
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let pt = estimate_pt_f(&coeffs, &xi, &f, &grid, 3000, 4).unwrap();
            let mart = check_martingale(&coeffs, &xi, &eta, &coupling, &grid, 3000, 4, 4.0, &Tolerances::default()).unwrap();
            (pt, mart.lhs)
        })
    };
    let (a, b) = (run(1), run(5));
    let bits = |e: &MCEstimate| (e.mean.to_bits(), e.std_error.to_bits(), e.min.to_bits(), e.max.to_bits());
    assert_eq!(bits(&a.0), bits(&b.0));
    assert_eq!(bits(&a.1), bits(&b.1));
}

#[test]
fn q_marginal_of_y_matches_the_uncoupled_law() {
    let coeffs = system("sine_multiplicative", &[("a", -1.0), ("c", 0.2), ("s0", 0.1)]);
    let m = 50;
    let grid = GridSpec::new(1.0, 2.0, m).unwrap().with_t0(1.0).unwrap();
    let (xi, eta) = (constant(1.0, m), constant(0.0, m));
    let coupling = Coupling::new(GammaSchedule::new(1.0, coeffs.constants().k4, 1.0).unwrap());
    let n = 100_000u64;
    let coupled: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| simulate_coupled_q(&coeffs, &xi, &eta, &coupling, &grid, 101, i).unwrap().y.endpoint()[0])
        .collect();
    let plain: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| simulate_path(&coeffs, &eta, &grid, 202, i).unwrap().endpoint()[0])
        .collect();
    let (m1, v1, se1) = endpoints(&coupled);
    let (m2, v2, se2) = endpoints(&plain);
    assert!((m1 - m2).abs() <= 4.0 * (se1 * se1 + se2 * se2).sqrt(), "means {m1} vs {m2}");
    // Normal-theory standard error of a sample variance.
    let vse = |v: f64| v * (2.0 / (n as f64 - 1.0)).sqrt();
    assert!((v1 - v2).abs() <= 4.0 * (vse(v1).powi(2) + vse(v2).powi(2)).sqrt(), "variances {v1} vs {v2}");
}

#[test]
fn weighted_gap_integral_is_finite_and_stable_under_refinement() {
    let coeffs = system("sine_multiplicative", &[("a", -1.0), ("c", 0.2), ("s0", 0.1)]);
    let mean_at = |m: usize| {
        let grid = GridSpec::new(1.0, 2.0, m).unwrap().with_t0(1.0).unwrap();
        let (xi, eta) = (constant(1.0, m), constant(0.0, m));
        let coupling = Coupling::new(GammaSchedule::new(1.0, coeffs.constants().k4, 1.0).unwrap());
        let functional = PathFunctional::WeightedPointGap { until: 1.0 };
        let vals: Vec<f64> = (0..2000u64)
            .into_par_iter()
            .map(|i| {
                let tr = simulate_coupled_q(&coeffs, &xi, &eta, &coupling, &grid, 7, i).unwrap();
                functional.value(&tr).unwrap()
            })
            .collect();
        endpoints(&vals).0
    };
    let (coarse, fine) = (mean_at(100), mean_at(200));
    assert!(coarse.is_finite() && fine.is_finite());
    assert!((coarse - fine).abs() <= 0.05 * fine, "{coarse} vs {fine}");
}

// A gap of 0.1 keeps ∫|φ|² of order one on the multiplicative system. With
// a unit gap the log-weight has variance near 11 there, and 1e5 samples
// cannot resolve the mean of a weight that heavy-tailed.
#[test]
fn weight_has_unit_mean_on_every_catalog_system() {
    for coeffs in catalog() {
        let m = 100;
        let grid = GridSpec::new(1.0, 2.0, m).unwrap().with_t0(1.0).unwrap();
        let (xi, eta) = (constant(1.0, m), constant(0.9, m));
        let coupling = Coupling::new(GammaSchedule::new(1.0, coeffs.constants().k4, 1.0).unwrap());
        let r = check_martingale(&coeffs, &xi, &eta, &coupling, &grid, 100_000, 31, 4.0, &Tolerances::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Holds, "{}: {}", coeffs.label(), r.csv_row());
    }
}

#[test]
fn entropy_stays_below_its_bound_on_every_catalog_system() {
    for coeffs in catalog() {
        let m = 100;
        let grid = GridSpec::new(1.0, 2.0, m).unwrap().with_t0(1.0).unwrap();
        let (xi, eta) = (constant(1.0, m), constant(0.0, m));
        let coupling = Coupling::new(GammaSchedule::new(1.0, coeffs.constants().k4, 1.0).unwrap());
        let r = check_entropy(&coeffs, &xi, &eta, &coupling, &grid, 10_000, 32, &Tolerances::default()).unwrap();
        assert!(r.lhs.mean + 3.0 * r.lhs.std_error <= r.rhs.mean, "{}: {}", coeffs.label(), r.csv_row());
    }
}

#[test]
fn k4_ratio_branches_agree() {
    for s in [0.1, 1.0, 10.0] {
        let near = bounds::k4_ratio(1e-8, s).unwrap();
        assert!((near - 1.0 / s).abs() <= 1e-6 / s, "s = {s}: {near}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phi_p_minimizer_is_admissible(
        k1 in 0.0..2.0f64, k2 in 0.0..0.3f64, k3 in 0.1..3.0f64, k4 in -2.0..2.0f64,
        excess in 0.5..20.0f64, gap in 0.0..2.0f64,
    ) {
        let consts = AssumptionConstants::new(k1, k2, k3, k4).unwrap();
        let p = bounds::power_threshold(&consts) + excess;
        let gaps = GapPair::new(gap, gap).unwrap();
        let rep = bounds::bound_phi_p(p, 3.0, &consts, gaps, 1.0, 40, 40).unwrap();
        let eps = rep.eps_star.unwrap();
        let cap = bounds::s_eps(eps, bounds::lambda_p(p).unwrap(), &consts, 1.0);
        prop_assert!(rep.s_star > 0.0);
        prop_assert!(rep.s_star <= cap * (1.0 + 1e-12), "s* = {} > s_eps = {}", rep.s_star, cap);
        prop_assert!(1.0 - 4.0 * k1 * k2 * rep.s_star > 0.0);
        prop_assert!(rep.value.is_finite() && rep.value >= 0.0);
    }
}
