//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with
//! a nonzero status if any criterion fails.
//!
//! The Monte Carlo criteria run through the command-line entry point twice,
//! once with one worker thread and once with eight, so the same runs also
//! feed the reproducibility criterion.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use harnack_lab::bounds::{self, GapPair};
use harnack_lab::cli::run_command;
use harnack_lab::coefficients::{builtin_system, AssumptionConstants, SystemParams};
use harnack_lab::coupling::{simulate_coupled_q, Coupling, GammaSchedule};
use harnack_lab::error::Error;
use harnack_lab::estimators::merged_fraction;
use harnack_lab::segment::{GridSpec, SegmentPath};

const THREAD_COUNTS: [usize; 2] = [1, 8];

struct Run {
    exit: [i32; 2],
    /// File name to contents, for each thread count.
    files: [BTreeMap<String, String>; 2],
}

impl Run {
    fn csv(&self, file: &str) -> Table {
        Table::parse(&self.files[1][file])
    }

    fn identical(&self) -> bool {
        self.files[0] == self.files[1] && !self.files[0].is_empty()
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn parse(text: &str) -> Self {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("").split(',').map(String::from).collect();
        let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
        Table { header, rows }
    }

    fn get(&self, key_col: &str, key: &str, col: &str) -> String {
        let k = self.header.iter().position(|h| h == key_col).unwrap();
        let c = self.header.iter().position(|h| h == col).unwrap();
        let row = self
            .rows
            .iter()
            .find(|r| r[k] == key)
            .or_else(|| self.rows.iter().find(|r| r[k].starts_with(key)))
            .unwrap_or_else(|| panic!("no row `{key}`"));
        row[c].clone()
    }

    fn num(&self, key_col: &str, key: &str, col: &str) -> f64 {
        self.get(key_col, key, col).parse().unwrap()
    }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn cli(cmd: &str, config: &Path, out: &Path, threads: usize) -> i32 {
    let argv: Vec<String> = [
        "harnack-lab",
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--threads",
        &threads.to_string(),
        "--quiet",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    run_command(&argv)
}

fn run_both(cmd: &str, config: &Path, scratch: &Path) -> Run {
    let mut exit = [0; 2];
    let mut files: [BTreeMap<String, String>; 2] = Default::default();
    for (i, &threads) in THREAD_COUNTS.iter().enumerate() {
        let out = scratch.join(format!("{cmd}-{threads}"));
        exit[i] = cli(cmd, config, &out, threads);
        if let Ok(entries) = std::fs::read_dir(&out) {
            for e in entries.flatten() {
                let name = e.file_name().to_string_lossy().into_owned();
                files[i].insert(name, std::fs::read_to_string(e.path()).unwrap());
            }
        }
    }
    Run { exit, files }
}

/// Writes `base` with textual replacements to a scratch config file.
fn variant(base: &str, replacements: &[(&str, &str)], scratch: &Path, name: &str) -> PathBuf {
    let mut text = std::fs::read_to_string(configs_dir().join(base)).unwrap();
    for (from, to) in replacements {
        assert!(text.contains(from), "`{from}` not found in {base}");
        text = text.replace(from, to);
    }
    let path = scratch.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: &str, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("{} criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn params(pairs: &[(&str, f64)]) -> SystemParams {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Largest grid error of the coupled difference against its closed form on
/// the additive system without delay feedback.
fn closed_form_error(m: usize) -> f64 {
    let a = -1.0;
    let coeffs = builtin_system("linear_additive", &params(&[("a", a), ("c", 0.0), ("s0", 1.0)])).unwrap();
    let grid = GridSpec::new(1.0, 2.0, m).unwrap().with_t0(1.0).unwrap();
    let sched = GammaSchedule::new(1.0, coeffs.constants().k4, 1.0).unwrap();
    let coupling = Coupling::new(sched);
    let xi = SegmentPath::constant(&[1.0], 1.0, m).unwrap();
    let eta = SegmentPath::constant(&[0.0], 1.0, m).unwrap();
    let traj = simulate_coupled_q(&coeffs, &xi, &eta, &coupling, &grid, 5, 0).unwrap();
    (0..=grid.n_steps())
        .map(|k| {
            let t = grid.time(k);
            let exact = (a * t).exp() * sched.contraction(0.0, t);
            (traj.x.point(k)[0] - traj.y.point(k)[0] - exact).abs()
        })
        .fold(0.0, f64::max)
}

/// Brute-force minimum of the `H_T` objective over a uniform grid in `s`.
fn dense_h_t(c: &AssumptionConstants, gaps: GapPair, t_end: f64, r0: f64, points: usize) -> f64 {
    let k2sq = c.k2 * c.k2;
    (1..=points)
        .map(|i| {
            let s = (t_end - r0) * i as f64 / points as f64;
            let ratio = c.k4 / (1.0 - (-c.k4 * s).exp());
            2.0 * c.k3 * c.k3 * gaps.point_gap.powi(2) * ratio
                + c.k1 * c.k1
                    * (r0 / 2.0 + s * (1.0 + k2sq * c.k3 * c.k3))
                    * (k2sq * (c.k1 * c.k1 * s + 8.0) * s).exp()
                    * gaps.seg_gap.powi(2)
        })
        .fold(f64::INFINITY, f64::min)
}

fn main() {
    let scratch = tempfile::tempdir().unwrap();
    let scratch = scratch.path();
    let cfg = configs_dir();
    let mut rep = Report { failures: 0 };
    let mut runs: Vec<(&str, Run)> = Vec::new();

    // 1. Girsanov weight has mean one.
    let couple = run_both("couple", &cfg.join("linear_couple.cfg"), scratch);
    {
        let t = couple.csv("couple.csv");
        let (mean, se) = (t.num("claim", "martingale", "lhs"), t.num("claim", "martingale", "lhs_se"));
        let z = (mean - 1.0) / se;
        rep.line(
            "1",
            couple.exit == [0, 0] && z.abs() <= 4.0,
            format!("mean R_T = {mean:.6} ± {se:.2e}, |z| = {:.2} (need <= 4)", z.abs()),
        );
    }

    // 2. Coupling success, and no more failures on a finer grid.
    {
        let t = couple.csv("couple_quantities.csv");
        let merged = t.num("quantity", "merged_fraction", "value");
        let coeffs = builtin_system("linear_additive", &params(&[("a", -1.0), ("c", 0.5), ("s0", 1.0)])).unwrap();
        let sched = GammaSchedule::new(1.0, coeffs.constants().k4, 1.0).unwrap();
        let coupling = Coupling::new(sched).with_delta_merge(1e-8).unwrap();
        let fine = GridSpec::new(1.0, 2.0, 800).unwrap().with_t0(1.0).unwrap();
        let xi = SegmentPath::constant(&[1.0], 1.0, 800).unwrap();
        let eta = SegmentPath::constant(&[0.0], 1.0, 800).unwrap();
        let merged_fine = merged_fraction(&coeffs, &xi, &eta, &coupling, &fine, 100_000, 17).unwrap();
        rep.line(
            "2",
            merged >= 0.999 && 1.0 - merged_fine <= 1.0 - merged,
            format!(
                "merged fraction {merged} at h = 1/400, {merged_fine} at h = 1/800 (need >= 0.999, unmerged non-increasing)"
            ),
        );
    }
    runs.push(("couple", couple));

    // 3. Entropy against the closed-form bounds.
    let entropy = run_both("entropy", &cfg.join("linear_entropy.cfg"), scratch);
    {
        let t = entropy.csv("entropy.csv");
        let check = |claim: &str| {
            let (l, se, r) = (t.num("claim", claim, "lhs"), t.num("claim", claim, "lhs_se"), t.num("claim", claim, "rhs"));
            (l + 3.0 * se <= r, format!("{claim}: {l:.6} + 3·{se:.1e} <= {r:.6}"))
        };
        let (ok_t, msg_t) = check("entropy");
        let (ok_u, msg_u) = check("entropy_until_0.5");
        rep.line("3", entropy.exit == [0, 0] && ok_t && ok_u, format!("{msg_t}; {msg_u}"));
    }
    runs.push(("entropy", entropy));

    // 4. Log-Harnack, and the Jensen control with equal initial data.
    let lh = run_both("log-harnack", &cfg.join("linear_log_harnack.cfg"), scratch);
    let jensen_cfg = variant(
        "linear_log_harnack.cfg",
        &[("eta = constant:0", "eta = constant:1")],
        scratch,
        "jensen.cfg",
    );
    let jensen = run_both("log-harnack", &jensen_cfg, scratch);
    {
        let t = lh.csv("log_harnack.csv");
        let j = jensen.csv("log_harnack.csv");
        let verdict = t.get("claim", "log_harnack", "verdict");
        let margin = t.num("claim", "log_harnack", "margin_se");
        let jv = j.get("claim", "log_harnack", "verdict");
        let jb = j.num("claim", "log_harnack", "bound");
        rep.line(
            "4",
            lh.exit == [0, 0] && verdict == "holds" && jensen.exit == [0, 0] && jv == "holds" && jb == 0.0,
            format!("verdict {verdict} with margin {margin:.1} SE; Jensen control {jv} with H_T = {jb}"),
        );
    }
    runs.push(("log-harnack", lh));
    runs.push(("log-harnack (xi = eta)", jensen));

    // 5. A horizon not exceeding the delay is an error.
    {
        let short = variant(
            "linear_log_harnack.cfg",
            &[("T = 2", "T = 1"), ("t0 = 1", "t0 = 0.5")],
            scratch,
            "short.cfg",
        );
        let code = cli("log-harnack", &short, &scratch.join("short"), 1);
        rep.line("5", code == 1, format!("log-harnack with T = r0 exits with status {code} (need 1)"));
    }

    // 6. Power Harnack above the threshold; the threshold itself is rejected.
    let ph = run_both("power-harnack", &cfg.join("power_harnack.cfg"), scratch);
    {
        let t = ph.csv("power_harnack.csv");
        let verdict = t.get("claim", "power_harnack", "verdict");
        let margin = t.num("claim", "power_harnack", "margin_se");
        let at9 = variant("power_harnack.cfg", &[("p = 16", "p = 9")], scratch, "p9.cfg");
        let code9 = cli("power-harnack", &at9, &scratch.join("p9"), 1);
        let consts = AssumptionConstants::new(2.0, 0.2, 10.0, -1.99).unwrap();
        let direct = bounds::bound_phi_p(9.0, 2.0, &consts, GapPair::new(1.0, 1.0).unwrap(), 1.0, 50, 50);
        let rejected = matches!(direct, Err(Error::PowerOutOfRange { .. }));
        rep.line(
            "6",
            ph.exit == [0, 0] && verdict == "holds" && code9 == 1 && rejected,
            format!("p = 16: {verdict} with margin {margin:.1} SE; p = 9 exits {code9}, rejected by the calculator: {rejected}"),
        );
    }

    // 7. Exponential moment of the integrated segment gap, at half and full cap.
    {
        let t = ph.csv("power_harnack.csv");
        let mut ok = t.rows.len() == 3;
        let mut parts = Vec::new();
        for row in t.rows.iter().filter(|r| r[0].starts_with("segment_integral_lemma")) {
            let (l, se, r): (f64, f64, f64) = (row[1].parse().unwrap(), row[2].parse().unwrap(), row[3].parse().unwrap());
            ok &= l + 3.0 * se <= r;
            parts.push(format!("{}: {l:.6} + 3·{se:.1e} <= {r:.6}", row[0]));
        }
        rep.line("7", ok, parts.join("; "));
    }
    runs.push(("power-harnack", ph));

    // 8. Closed-form difference, first order in h.
    {
        let (e200, e400) = (closed_form_error(200), closed_form_error(400));
        let ratio = e200 / e400;
        rep.line(
            "8",
            (1.6..=2.4).contains(&ratio),
            format!("max error {e200:.3e} at h = 1/200, {e400:.3e} at h = 1/400, ratio {ratio:.3} (need [1.6, 2.4])"),
        );
    }

    // 9. Bound calculators.
    {
        let c = AssumptionConstants::new(1.0, 0.0, 1.0, 1.0).unwrap();
        let gaps = GapPair::new(1.0, 1.0).unwrap();
        let h = bounds::bound_h_t(&c, gaps, 2.0, 1.0, 200).unwrap();
        let dense = dense_h_t(&c, gaps, 2.0, 1.0, 100_000);
        let near = AssumptionConstants::new(1.0, 0.0, 1.0, 1e-4).unwrap();
        let flat = AssumptionConstants::new(1.0, 0.0, 1.0, 1e-12).unwrap();
        let h_near = bounds::bound_h_t(&near, gaps, 2.0, 1.0, 200).unwrap().value;
        let h_flat = bounds::bound_h_t(&flat, gaps, 2.0, 1.0, 200).unwrap().value;
        let g_near = GammaSchedule::new(1.0, 1e-4, 1.0).unwrap().gamma(0.5).unwrap();
        let g_flat = GammaSchedule::new(1.0, 1e-12, 1.0).unwrap().gamma(0.5).unwrap();
        let rel_h = (h_near - h_flat).abs() / h_flat;
        let rel_g = (g_near - g_flat).abs() / g_flat;
        let zero = bounds::bound_h_t(&c, GapPair::zero(), 2.0, 1.0, 200).unwrap().value;
        let bounds_run = run_both("bounds", &cfg.join("bounds_example.cfg"), scratch);
        let cli_value: f64 = bounds_run.csv("bounds.csv")
            .rows
            .iter()
            .find(|r| r[0] == "H_T" && r[1] == "value")
            .map_or(f64::NAN, |r| r[2].parse().unwrap());
        let ok = (h.value - dense).abs() <= 1e-3
            && (h.value - 4.6639).abs() < 1e-4
            && (h.s_star - 1.0).abs() < 1e-9
            && cli_value == h.value
            && rel_h <= 1e-4
            && rel_g <= 1e-4
            && zero == 0.0;
        rep.line(
            "9",
            ok,
            format!(
                "H_T = {:.6} (dense grid {dense:.6}, argmin s = {}); small-K4 relative gaps {rel_h:.1e} (H_T), {rel_g:.1e} (gamma); H_T(xi, xi) = {zero}",
                h.value, h.s_star
            ),
        );
        runs.push(("bounds", bounds_run));
    }

    // 10. Stationary segments of the Ornstein-Uhlenbeck process.
    let st = run_both("stationary", &cfg.join("ou_stationary.cfg"), scratch);
    {
        let t = st.csv("stationary.csv");
        let var = t.num("quantity", "endpoint_variance", "value");
        let cov = t.num("quantity", "lag_covariance", "value");
        let target_cov = 0.5 * (-1.0f64).exp();
        let ok = st.exit == [0, 0]
            && (var - 0.5).abs() <= 0.05 * 0.5
            && (cov - target_cov).abs() <= 0.1 * target_cov;
        rep.line(
            "10",
            ok,
            format!("variance {var:.4} (0.5 ± 5%), lag covariance {cov:.4} ({target_cov:.4} ± 10%)"),
        );
    }
    runs.push(("stationary", st));

    // 11. Bit-identical output under one and eight threads.
    {
        let audit = run_both("audit", &cfg.join("sine_audit.cfg"), scratch);
        runs.push(("audit", audit));
        let differing: Vec<&str> = runs.iter().filter(|(_, r)| !r.identical()).map(|(n, _)| *n).collect();
        rep.line(
            "11",
            differing.is_empty(),
            if differing.is_empty() {
                format!("{} runs produce identical CSV files with 1 and 8 threads", runs.len())
            } else {
                format!("output differs between thread counts for {differing:?}")
            },
        );
    }

    println!("{} failing criteria", rep.failures);
    if rep.failures > 0 {
        std::process::exit(1);
    }
}
