//! Monte Carlo estimators and inequality verdicts.
//!
//! Paths run in parallel on the current rayon pool. Per-path results are
//! collected in path order and reduced by pairwise summation, so estimates do
//! not depend on the number of threads.

use std::fmt;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::bounds::{self, GapPair, LemmaParams};
use crate::coefficients::CoefficientSet;
use crate::coupling::{simulate_coupled_p, simulate_coupled_q, CoupledTrajectory, Coupling};
use crate::error::{Error, Result};
use crate::integrator::simulate_path;
use crate::rng::derive_seed;
use crate::segment::{GridSpec, SegmentPath};

/// Largest exponent accepted before `exp` is considered to overflow.
const MAX_EXPONENT: f64 = 700.0;

/// Seed purposes for the independent sides of a comparison.
const PURPOSE_LHS: u64 = 1;
const PURPOSE_RHS: u64 = 2;

/// Software version stamped on every CSV row.
pub fn version_string() -> String {
    format!("harnack-lab-v{}", env!("CARGO_PKG_VERSION"))
}

fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct MCEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
    pub seed: u64,
    pub min: f64,
    pub max: f64,
    /// Paths whose coupling did not merge. They are included in the mean.
    pub failures: usize,
}

impl MCEstimate {
    pub fn from_samples(samples: &[f64], seed: u64, failures: usize) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::InvalidParameter {
                name: "n".into(),
                value: n as f64,
                reason: "need at least 2 paths".into(),
            });
        }
        if let Some(step) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "Monte Carlo sample".into(),
                step,
            });
        }
        let mean = pairwise_sum(samples) / n as f64;
        let sq: Vec<f64> = samples.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = pairwise_sum(&sq) / (n - 1) as f64;
        let (min, max) = samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Ok(Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            n,
            seed,
            min,
            max,
            failures,
        })
    }

    /// A known value, carried as an estimate with zero error.
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            std_error: 0.0,
            n: 0,
            seed: 0,
            min: value,
            max: value,
            failures: 0,
        }
    }

    /// `g(mean)` with the delta-method error `|g'(mean)|·se`.
    pub fn map(&self, g: impl Fn(f64) -> f64, dg: impl Fn(f64) -> f64) -> Self {
        Self {
            mean: g(self.mean),
            std_error: dg(self.mean).abs() * self.std_error,
            min: g(self.min).min(g(self.max)),
            max: g(self.min).max(g(self.max)),
            ..self.clone()
        }
    }

    pub fn failure_fraction(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.failures as f64 / self.n as f64
        }
    }
}

/// Thresholds for turning a margin into a verdict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Holds when `margin_se ≥ −k_tol`.
    pub k_tol: f64,
    /// Violated when `margin_se ≤ −k_viol`.
    pub k_viol: f64,
    /// Above this fraction of unmerged paths the verdict is inconclusive.
    pub max_failure_fraction: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            k_tol: 3.0,
            k_viol: 6.0,
            max_failure_fraction: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Holds,
    Violated,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Holds => "holds",
            Verdict::Violated => "violated",
            Verdict::Inconclusive => "inconclusive",
        }
    }

    /// Process exit status for this verdict.
    pub fn exit_code(&self) -> i32 {
        match self {
            Verdict::Holds => 0,
            Verdict::Violated => 2,
            Verdict::Inconclusive => 3,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct VerdictReport {
    pub claim: String,
    pub lhs: MCEstimate,
    pub rhs: MCEstimate,
    /// The closed-form bound that enters the right side.
    pub bound: f64,
    pub margin_se: f64,
    pub verdict: Verdict,
    pub n: usize,
    pub seed: u64,
    pub h: f64,
    pub failures: usize,
}

pub const CSV_HEADER: &str =
    "claim,lhs,lhs_se,rhs,rhs_se,bound,margin_se,verdict,n,seed,h,failures,version";

impl VerdictReport {
    /// Builds a one-sided report for the claim `lhs ≤ rhs`.
    #[allow(clippy::too_many_arguments)]
    pub fn one_sided(
        claim: impl Into<String>,
        lhs: MCEstimate,
        rhs: MCEstimate,
        bound: f64,
        n: usize,
        seed: u64,
        h: f64,
        tol: &Tolerances,
    ) -> Self {
        let margin = margin_se(rhs.mean - lhs.mean, lhs.std_error, rhs.std_error);
        let failures = lhs.failures + rhs.failures;
        let mut verdict = if margin >= -tol.k_tol {
            Verdict::Holds
        } else if margin <= -tol.k_viol {
            Verdict::Violated
        } else {
            Verdict::Inconclusive
        };
        if failure_fraction(failures, n) > tol.max_failure_fraction {
            verdict = Verdict::Inconclusive;
        }
        Self {
            claim: claim.into(),
            lhs,
            rhs,
            bound,
            margin_se: margin,
            verdict,
            n,
            seed,
            h,
            failures,
        }
    }

    /// Builds a report for the claim `lhs = rhs`. The margin is `−|rhs − lhs|/se`,
    /// so the same thresholds apply with `k_tol` widened to `k_two_sided`.
    #[allow(clippy::too_many_arguments)]
    pub fn two_sided(
        claim: impl Into<String>,
        lhs: MCEstimate,
        rhs: MCEstimate,
        n: usize,
        seed: u64,
        h: f64,
        k_two_sided: f64,
        tol: &Tolerances,
    ) -> Self {
        let bound = rhs.mean;
        let mut report = Self::one_sided(claim, lhs, rhs, bound, n, seed, h, tol);
        report.margin_se = -report.margin_se.abs();
        report.verdict = if report.margin_se >= -k_two_sided {
            Verdict::Holds
        } else if report.margin_se <= -tol.k_viol.max(k_two_sided) {
            Verdict::Violated
        } else {
            Verdict::Inconclusive
        };
        if failure_fraction(report.failures, n) > tol.max_failure_fraction {
            report.verdict = Verdict::Inconclusive;
        }
        report
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.claim,
            self.lhs.mean,
            self.lhs.std_error,
            self.rhs.mean,
            self.rhs.std_error,
            self.bound,
            self.margin_se,
            self.verdict,
            self.n,
            self.seed,
            self.h,
            self.failures,
            version_string()
        )
    }
}

fn failure_fraction(failures: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        failures as f64 / n as f64
    }
}

fn margin_se(diff: f64, se_a: f64, se_b: f64) -> f64 {
    let se = se_a.hypot(se_b);
    if se > 0.0 {
        diff / se
    } else if diff >= 0.0 {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    }
}

/// CSV text with header for a set of reports.
pub fn reports_to_csv(reports: &[VerdictReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Catalog of bounded test functions on segments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFunctionKind {
    /// `f ≡ c`
    Constant(f64),
    /// `1 + min(|ξ(0)|², C)`
    OnePlusCappedSquare,
    /// `exp(min(‖ξ‖∞, C))`
    ExpCappedSup,
    /// `min(|ξ(0)|², C)`
    CappedSquare,
    /// `ξ(0)` in the first coordinate, clamped to `[−C, C]`.
    FirstCoordinate,
}

/// A test function together with its declared range `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestFunction {
    pub kind: TestFunctionKind,
    pub cap: f64,
    pub lower: f64,
    pub upper: f64,
}

pub const DEFAULT_CAP: f64 = 100.0;

pub const FUNCTION_CATALOG: [&str; 5] =
    ["constant", "one_plus_capped_square", "exp_capped_sup", "capped_square", "first_coordinate"];

impl TestFunction {
    pub fn new(kind: TestFunctionKind, cap: f64) -> Result<Self> {
        if !(cap > 0.0 && cap.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "cap".into(),
                value: cap,
                reason: "must be positive and finite".into(),
            });
        }
        let (lower, upper) = match kind {
            TestFunctionKind::Constant(c) => (c, c),
            TestFunctionKind::OnePlusCappedSquare => (1.0, 1.0 + cap),
            TestFunctionKind::ExpCappedSup => (1.0, cap.exp()),
            TestFunctionKind::CappedSquare => (0.0, cap),
            TestFunctionKind::FirstCoordinate => (-cap, cap),
        };
        Ok(Self {
            kind,
            cap,
            lower,
            upper,
        })
    }

    pub fn by_name(name: &str, cap: f64, constant: f64) -> Result<Self> {
        let kind = match name {
            "constant" => TestFunctionKind::Constant(constant),
            "one_plus_capped_square" => TestFunctionKind::OnePlusCappedSquare,
            "exp_capped_sup" => TestFunctionKind::ExpCappedSup,
            "capped_square" => TestFunctionKind::CappedSquare,
            "first_coordinate" => TestFunctionKind::FirstCoordinate,
            other => {
                return Err(Error::Domain(format!(
                    "unknown test function `{other}` (expected one of {})",
                    FUNCTION_CATALOG.join(", ")
                )))
            }
        };
        Self::new(kind, cap)
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            TestFunctionKind::Constant(_) => "constant",
            TestFunctionKind::OnePlusCappedSquare => "one_plus_capped_square",
            TestFunctionKind::ExpCappedSup => "exp_capped_sup",
            TestFunctionKind::CappedSquare => "capped_square",
            TestFunctionKind::FirstCoordinate => "first_coordinate",
        }
    }

    fn raw(&self, seg: &SegmentPath) -> f64 {
        let c = self.cap;
        let x0 = seg.current();
        let sq = || x0.iter().map(|v| v * v).sum::<f64>();
        match self.kind {
            TestFunctionKind::Constant(v) => v,
            TestFunctionKind::OnePlusCappedSquare => 1.0 + sq().min(c),
            TestFunctionKind::ExpCappedSup => {
                let sup = (0..=seg.m())
                    .map(|i| seg.point(i).iter().map(|v| v * v).sum::<f64>().sqrt())
                    .fold(0.0_f64, f64::max);
                sup.min(c).exp()
            }
            TestFunctionKind::CappedSquare => sq().min(c),
            TestFunctionKind::FirstCoordinate => x0[0].clamp(-c, c),
        }
    }

    /// Evaluates `f` and checks the declared range.
    pub fn evaluate(&self, seg: &SegmentPath) -> Result<f64> {
        let v = self.raw(seg);
        if !(v >= self.lower && v <= self.upper) {
            return Err(Error::TestFunctionRange {
                name: self.name().into(),
                value: v,
                lower: self.lower,
                upper: self.upper,
            });
        }
        Ok(v)
    }
}

fn check_paths(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidParameter {
            name: "n".into(),
            value: n as f64,
            reason: "need at least 2 paths".into(),
        });
    }
    Ok(())
}

/// Mean of `g(f(X_T^ξ))` over `n` independent paths.
fn estimate_terminal(
    coeffs: &CoefficientSet,
    xi: &SegmentPath,
    f: &TestFunction,
    grid: &GridSpec,
    n: usize,
    seed: u64,
    g: impl Fn(f64) -> f64 + Sync,
) -> Result<MCEstimate> {
    check_paths(n)?;
    let samples = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let path = simulate_path(coeffs, xi, grid, seed, i)?;
            Ok(g(f.evaluate(&path.terminal_segment(xi))?))
        })
        .collect::<Result<Vec<f64>>>()?;
    MCEstimate::from_samples(&samples, seed, 0)
}

/// `P_T f(ξ) = E f(X_T^ξ)`.
pub fn estimate_pt_f(
    coeffs: &CoefficientSet,
    xi: &SegmentPath,
    f: &TestFunction,
    grid: &GridSpec,
    n: usize,
    seed: u64,
) -> Result<MCEstimate> {
    estimate_terminal(coeffs, xi, f, grid, n, seed, |v| v)
}

/// `P_T (log f)(ξ)`; requires `f ≥ 1`.
pub fn estimate_pt_log_f(
    coeffs: &CoefficientSet,
    xi: &SegmentPath,
    f: &TestFunction,
    grid: &GridSpec,
    n: usize,
    seed: u64,
) -> Result<MCEstimate> {
    estimate_terminal(coeffs, xi, f, grid, n, seed, f64::ln)
}

/// `P_T f^p(ξ)`.
pub fn estimate_pt_f_pow(
    coeffs: &CoefficientSet,
    xi: &SegmentPath,
    f: &TestFunction,
    p: f64,
    grid: &GridSpec,
    n: usize,
    seed: u64,
) -> Result<MCEstimate> {
    estimate_terminal(coeffs, xi, f, grid, n, seed, |v| v.powf(p))
}

/// A scalar read off a coupled trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathFunctional {
    /// `∫_0^until |φ_t|² dt`
    PhiSquared { until: f64 },
    /// `∫_0^until ‖X_t − Y_t‖∞² dt`
    SegmentGapSquared { until: f64 },
    /// `∫_0^until |X(t) − Y(t)|²/γ(t)² dt`, with `until ≤ t0`.
    WeightedPointGap { until: f64 },
    /// `‖X_at − Y_at‖∞²`
    SegmentGapAt { at: f64 },
}

impl PathFunctional {
    fn step(&self, grid: &GridSpec) -> Result<usize> {
        match *self {
            PathFunctional::PhiSquared { until }
            | PathFunctional::SegmentGapSquared { until }
            | PathFunctional::WeightedPointGap { until } => grid.index_of(until, "until"),
            PathFunctional::SegmentGapAt { at } => grid.index_of(at, "at"),
        }
    }

    pub fn value(&self, traj: &CoupledTrajectory) -> Result<f64> {
        let k = self.step(traj.x.grid())?;
        Ok(match self {
            PathFunctional::PhiSquared { .. } => traj.phi_sq_cum[k],
            PathFunctional::SegmentGapSquared { .. } => traj.seg_gap_sq_cum[k],
            PathFunctional::WeightedPointGap { until } => {
                if *until > traj.schedule.t0() {
                    return Err(Error::Domain(format!(
                        "weighted gap is only defined up to t0 = {}",
                        traj.schedule.t0()
                    )));
                }
                traj.weighted_gap_cum[k]
            }
            PathFunctional::SegmentGapAt { .. } => traj.seg_gap[k].powi(2),
        })
    }
}

/// Runs `n` coupled pairs under `Q` and maps each to a scalar, returning the
/// samples and the number of unmerged pairs.
#[allow(clippy::too_many_arguments)]
fn coupled_samples(
    coeffs: &CoefficientSet,
    xi: &SegmentPath,
    eta: &SegmentPath,
    coupling: &Coupling,
    grid: &GridSpec,
    n: usize,
    seed: u64,
    under_p: bool,
    g: impl Fn(u64, &CoupledTrajectory) -> Result<f64> + Sync,
) -> Result<(Vec<f64>, usize)> {
    check_paths(n)?;
    let sim = if under_p {
        simulate_coupled_p
    } else {
        simulate_coupled_q
    };
    let pairs = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let tr = sim(coeffs, xi, eta, coupling, grid, seed, i)?;
            Ok((g(i, &tr)?, !tr.merged))
        })
        .collect::<Result<Vec<(f64, bool)>>>()?;
    let failures = pairs.iter().filter(|(_, f)| *f).count();
    Ok((pairs.into_iter().map(|(v, _)| v).collect(), failures))
}

/// `E[R_T log R_T] = ½ E_Q ∫_0^T |φ|²`.
pub fn estimate_entropy_q(
    coeffs: &CoefficientSet,
    xi: &SegmentPath,
    eta: &SegmentPath,
    coupling: &Coupling,
    grid: &GridSpec,
    n: usize,
    seed: u64,
) -> Result<MCEstimate> {
    estimate_entropy_q_until(coeffs, xi, eta, coupling, grid, grid.t_end(), n, seed)
}

/// `½ E_Q ∫_0^t |φ|²`, the entropy of `R_t`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_entropy_q_until(
    coeffs: &CoefficientSet,
    xi: &SegmentPath,
    eta: &SegmentPath,
    coupling: &Coupling,
    grid: &GridSpec,
    t: f64,
    n: usize,
    seed: u64,
) -> Result<MCEstimate> {
    let functional = PathFunctional::PhiSquared { until: t };
    let (samples, failures) =
        coupled_samples(coeffs, xi, eta, coupling, grid, n, seed, false, |_, tr| {
            Ok(0.5 * functional.value(tr)?)
        })?;
    MCEstimate::from_samples(&samples, seed, failures)
}

/// `E_Q exp(λ F)` for a path functional `F`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_exp_functional(
    coeffs: &CoefficientSet,
    xi: &SegmentPath,
    eta: &SegmentPath,
    coupling: &Coupling,
    grid: &GridSpec,
    functional: PathFunctional,
    lambda: f64,
    n: usize,
    seed: u64,
) -> Result<MCEstimate> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "lambda".into(),
            value: lambda,
            reason: "must be finite and nonnegative".into(),
        });
    }
    let (samples, failures) =
        coupled_samples(coeffs, xi, eta, coupling, grid, n, seed, false, |i, tr| {
            let exponent = lambda * functional.value(tr)?;
            if exponent > MAX_EXPONENT {
                return Err(Error::ExponentOverflow {
                    lambda,
                    path: i,
                    exponent,
                });
            }
            Ok(exponent.exp())
        })?;
    MCEstimate::from_samples(&samples, seed, failures)
}

/// `E_P R_T`, which equals 1 for a true martingale.
pub fn estimate_weight_p(
    coeffs: &CoefficientSet,
    xi: &SegmentPath,
    eta: &SegmentPath,
    coupling: &Coupling,
    grid: &GridSpec,
    n: usize,
    seed: u64,
) -> Result<MCEstimate> {
    let (samples, failures) =
        coupled_samples(coeffs, xi, eta, coupling, grid, n, seed, true, |_, tr| {
            Ok(tr.weight_end())
        })?;
    MCEstimate::from_samples(&samples, seed, failures)
}

/// Fraction of coupled pairs under `Q` that merged at `t0`.
#[allow(clippy::too_many_arguments)]
pub fn merged_fraction(
    coeffs: &CoefficientSet,
    xi: &SegmentPath,
    eta: &SegmentPath,
    coupling: &Coupling,
    grid: &GridSpec,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let (_, failures) = coupled_samples(coeffs, xi, eta, coupling, grid, n, seed, false, |_, _| Ok(0.0))?;
    Ok(1.0 - failures as f64 / n as f64)
}

/// How the free parameter `s` in `H_T` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SChoice {
    /// Minimize over a log grid of the given size.
    Optimize(usize),
    /// Use this `s ∈ (0, T − r0]` directly.
    Fixed(f64),
}

fn h_t_value(
    coeffs: &CoefficientSet,
    gaps: GapPair,
    grid: &GridSpec,
    s_choice: SChoice,
) -> Result<f64> {
    let consts = coeffs.constants();
    let (t_end, r0) = (grid.t_end(), grid.r0());
    match s_choice {
        SChoice::Optimize(size) => Ok(bounds::bound_h_t(&consts, gaps, t_end, r0, size)?.value),
        SChoice::Fixed(s) => {
            if !(t_end > r0) {
                return Err(Error::HorizonTooShort { t_end, r0 });
            }
            if !(s > 0.0 && s <= t_end - r0) {
                return Err(Error::InvalidParameter {
                    name: "s".into(),
                    value: s,
                    reason: format!("must lie in (0, T - r0] = (0, {}]", t_end - r0),
                });
            }
            // A one-point grid at s: the report is the objective at s.
            let c = consts;
            let k2sq = c.k2 * c.k2;
            Ok(2.0 * c.k3 * c.k3 * gaps.point_gap.powi(2) * bounds::k4_ratio(c.k4, s)?
                + c.k1 * c.k1
                    * (r0 / 2.0 + s * (1.0 + k2sq * c.k3 * c.k3))
                    * (k2sq * (c.k1 * c.k1 * s + 8.0) * s).exp()
                    * gaps.seg_gap.powi(2))
        }
    }
}

/// Checks `P_T log f(η) ≤ log P_T f(ξ) + H_T(ξ, η)`.
#[allow(clippy::too_many_arguments)]
pub fn check_log_harnack(
    coeffs: &CoefficientSet,
    xi: &SegmentPath,
    eta: &SegmentPath,
    f: &TestFunction,
    grid: &GridSpec,
    n: usize,
    seed: u64,
    s_choice: SChoice,
    tol: &Tolerances,
) -> Result<VerdictReport> {
    if !(grid.t_end() > grid.r0()) {
        return Err(Error::HorizonTooShort {
            t_end: grid.t_end(),
            r0: grid.r0(),
        });
    }
    if f.lower < 1.0 {
        return Err(Error::Domain(format!(
            "log-Harnack needs f >= 1, `{}` is only bounded below by {}",
            f.name(),
            f.lower
        )));
    }
    let gaps = GapPair::from_segments(xi, eta)?;
    let h_t = h_t_value(coeffs, gaps, grid, s_choice)?;
    let lhs = estimate_pt_log_f(coeffs, eta, f, grid, n, derive_seed(seed, PURPOSE_LHS))?;
    let pf = estimate_pt_f(coeffs, xi, f, grid, n, derive_seed(seed, PURPOSE_RHS))?;
    let rhs = pf.map(|m| m.ln() + h_t, |m| 1.0 / m);
    Ok(VerdictReport::one_sided(
        "log_harnack",
        lhs,
        rhs,
        h_t,
        n,
        seed,
        grid.h(),
        tol,
    ))
}

/// Grid sizes for the `Φ_p` minimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiGrids {
    pub eps: usize,
    pub s: usize,
}

impl Default for PhiGrids {
    fn default() -> Self {
        Self {
            eps: bounds::DEFAULT_GRID_SIZE,
            s: bounds::DEFAULT_GRID_SIZE,
        }
    }
}

/// Checks `P_T f(η) ≤ (P_T f^p(ξ))^{1/p} exp(Φ_p(T, ξ, η))`.
#[allow(clippy::too_many_arguments)]
pub fn check_power_harnack(
    coeffs: &CoefficientSet,
    xi: &SegmentPath,
    eta: &SegmentPath,
    f: &TestFunction,
    p: f64,
    grid: &GridSpec,
    n: usize,
    seed: u64,
    grids: PhiGrids,
    tol: &Tolerances,
) -> Result<VerdictReport> {
    let consts = coeffs.constants();
    let gaps = GapPair::from_segments(xi, eta)?;
    let phi = bounds::bound_phi_p(p, grid.t_end(), &consts, gaps, grid.r0(), grids.eps, grids.s)?;
    if f.lower < 0.0 {
        return Err(Error::Domain(format!(
            "power Harnack needs f >= 0, `{}` is only bounded below by {}",
            f.name(),
            f.lower
        )));
    }
    let lhs = estimate_pt_f(coeffs, eta, f, grid, n, derive_seed(seed, PURPOSE_LHS))?;
    let fp = estimate_pt_f_pow(coeffs, xi, f, p, grid, n, derive_seed(seed, PURPOSE_RHS))?;
    let scale = phi.value.exp();
    let rhs = fp.map(
        |m| m.powf(1.0 / p) * scale,
        |m| m.powf(1.0 / p - 1.0) / p * scale,
    );
    Ok(VerdictReport::one_sided(
        "power_harnack",
        lhs,
        rhs,
        phi.value,
        n,
        seed,
        grid.h(),
        tol,
    ))
}

/// Checks `E_P R_T = 1` to within `k_two_sided` standard errors.
#[allow(clippy::too_many_arguments)]
pub fn check_martingale(
    coeffs: &CoefficientSet,
    xi: &SegmentPath,
    eta: &SegmentPath,
    coupling: &Coupling,
    grid: &GridSpec,
    n: usize,
    seed: u64,
    k_two_sided: f64,
    tol: &Tolerances,
) -> Result<VerdictReport> {
    let lhs = estimate_weight_p(coeffs, xi, eta, coupling, grid, n, seed)?;
    Ok(VerdictReport::two_sided(
        "martingale",
        lhs,
        MCEstimate::exact(1.0),
        n,
        seed,
        grid.h(),
        k_two_sided,
        tol,
    ))
}

/// Checks the entropy of `R_T` against its closed-form bound. The pair is
/// coupled with `θ = 1`.
#[allow(clippy::too_many_arguments)]
pub fn check_entropy(
    coeffs: &CoefficientSet,
    xi: &SegmentPath,
    eta: &SegmentPath,
    coupling: &Coupling,
    grid: &GridSpec,
    n: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<VerdictReport> {
    let consts = coeffs.constants();
    let gaps = GapPair::from_segments(xi, eta)?;
    let t0 = coupling.schedule.t0();
    let bound = bounds::bound_entropy_terminal(&consts, t0, grid.r0(), gaps)?;
    let lhs = estimate_entropy_q(coeffs, xi, eta, coupling, grid, n, seed)?;
    Ok(VerdictReport::one_sided(
        "entropy",
        lhs,
        MCEstimate::exact(bound),
        bound,
        n,
        seed,
        grid.h(),
        tol,
    ))
}

/// Checks the entropy of `R_t` for `t < t0` against the finite-time bound.
#[allow(clippy::too_many_arguments)]
pub fn check_entropy_until(
    coeffs: &CoefficientSet,
    xi: &SegmentPath,
    eta: &SegmentPath,
    coupling: &Coupling,
    grid: &GridSpec,
    t: f64,
    n: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<VerdictReport> {
    let consts = coeffs.constants();
    let gaps = GapPair::from_segments(xi, eta)?;
    let sched = &coupling.schedule;
    let bound = bounds::bound_entropy_prop21(&consts, sched.theta(), t, sched.t0(), gaps)?;
    let lhs = estimate_entropy_q_until(coeffs, xi, eta, coupling, grid, t, n, seed)?;
    Ok(VerdictReport::one_sided(
        format!("entropy_until_{t}"),
        lhs,
        MCEstimate::exact(bound),
        bound,
        n,
        seed,
        grid.h(),
        tol,
    ))
}

/// Checks `E_Q exp(λ ∫_0^s ‖X_t − Y_t‖∞² dt)` against its closed-form bound.
#[allow(clippy::too_many_arguments)]
pub fn check_segment_integral_lemma(
    coeffs: &CoefficientSet,
    xi: &SegmentPath,
    eta: &SegmentPath,
    coupling: &Coupling,
    grid: &GridSpec,
    s: f64,
    lambda: f64,
    n: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<VerdictReport> {
    let consts = coeffs.constants();
    let gaps = GapPair::from_segments(xi, eta)?;
    if s > coupling.schedule.t0() {
        return Err(Error::LemmaConstraint(format!(
            "s = {s} must not exceed t0 = {}",
            coupling.schedule.t0()
        )));
    }
    let rhs = bounds::lemma_rhs(LemmaParams::SegmentIntegral { lambda, s, gaps }, &consts)?;
    let lhs = estimate_exp_functional(
        coeffs,
        xi,
        eta,
        coupling,
        grid,
        PathFunctional::SegmentGapSquared { until: s },
        lambda,
        n,
        seed,
    )?;
    Ok(VerdictReport::one_sided(
        format!("segment_integral_lemma_lambda_{lambda}"),
        lhs,
        MCEstimate::exact(rhs.prefactor),
        rhs.prefactor,
        n,
        seed,
        grid.h(),
        tol,
    ))
}

/// Options for [`sample_stationary_segments`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryOptions {
    /// Segments extracted from each independent chain.
    pub segments_per_chain: usize,
    /// Time between the ends of consecutive segments of one chain, in units
    /// of `r0`. Must be at least 1.
    pub spacing: f64,
    /// Every coordinate of the constant initial segment of each chain.
    pub initial_value: f64,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self {
            segments_per_chain: 10,
            spacing: 2.0,
            initial_value: 0.0,
        }
    }
}

/// Segments drawn from the long-run law of a delay-free equation, with
/// endpoint statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct StationarySample {
    pub segments: Vec<SegmentPath>,
    /// Mean of the first coordinate of `ξ(0)`.
    pub endpoint_mean: f64,
    /// Variance of the first coordinate of `ξ(0)`.
    pub endpoint_variance: f64,
    /// Covariance of the first coordinates of `ξ(0)` and `ξ(−r0)`.
    pub lag_covariance: f64,
}

impl StationarySample {
    pub fn to_csv(&self, seed: u64, h: f64) -> String {
        let mut out = String::from("quantity,value,n,seed,h,version\n");
        let n = self.segments.len();
        let v = version_string();
        for (name, value) in [
            ("endpoint_mean", self.endpoint_mean),
            ("endpoint_variance", self.endpoint_variance),
            ("lag_covariance", self.lag_covariance),
        ] {
            let _ = writeln!(out, "{name},{value},{n},{seed},{h},{v}");
        }
        out
    }
}

/// Samples `n` segments of a delay-free, time-homogeneous equation after a
/// burn-in, using independent chains started from a constant segment.
pub fn sample_stationary_segments(
    coeffs: &CoefficientSet,
    r0: f64,
    m: usize,
    n: usize,
    burn_in: f64,
    seed: u64,
    options: StationaryOptions,
) -> Result<StationarySample> {
    if !coeffs.is_delay_free() || !coeffs.is_autonomous() {
        return Err(Error::Domain(
            "stationary sampling needs a delay-free, time-homogeneous system".into(),
        ));
    }
    check_paths(n)?;
    if !(burn_in >= 0.0) || !(options.spacing >= 1.0) || options.segments_per_chain == 0 {
        return Err(Error::Domain(
            "need burn_in >= 0, spacing >= 1 and segments_per_chain >= 1".into(),
        ));
    }
    let probe = GridSpec::new(r0, r0, m)?;
    let h = probe.h();
    let burn_steps = (burn_in / h - 1e-9).ceil().max(0.0) as usize;
    let spacing_steps = (options.spacing * m as f64).round() as usize;
    let per_chain = options.segments_per_chain;
    let chains = n.div_ceil(per_chain);
    // The first segment ends r0 after burn-in.
    let total_steps = burn_steps + m + (per_chain - 1) * spacing_steps;
    let grid = GridSpec::new(r0, total_steps as f64 * h, m)?;
    let origin = SegmentPath::constant(&vec![options.initial_value; coeffs.dim()], r0, m)?;

    let per_chain_segments = (0..chains as u64)
        .into_par_iter()
        .map(|c| {
            let path = simulate_path(coeffs, &origin, &grid, seed, c)?;
            let take = per_chain.min(n - c as usize * per_chain);
            Ok((0..take)
                .map(|j| path.segment_at(burn_steps + m + j * spacing_steps, &origin))
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<Vec<SegmentPath>>>>()?;
    let segments: Vec<SegmentPath> = per_chain_segments.into_iter().flatten().collect();

    let ends: Vec<f64> = segments.iter().map(|s| s.current()[0]).collect();
    let starts: Vec<f64> = segments.iter().map(|s| s.point(0)[0]).collect();
    let count = segments.len() as f64;
    let mean_end = pairwise_sum(&ends) / count;
    let mean_start = pairwise_sum(&starts) / count;
    let sq: Vec<f64> = ends.iter().map(|e| (e - mean_end).powi(2)).collect();
    let cross: Vec<f64> = ends
        .iter()
        .zip(&starts)
        .map(|(e, s)| (e - mean_end) * (s - mean_start))
        .collect();
    Ok(StationarySample {
        endpoint_mean: mean_end,
        endpoint_variance: pairwise_sum(&sq) / (count - 1.0),
        lag_covariance: pairwise_sum(&cross) / (count - 1.0),
        segments,
    })
}
