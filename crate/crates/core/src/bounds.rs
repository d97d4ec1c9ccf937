//! Closed-form Harnack and entropy bounds.
//!
//! Infima over the free time parameter `s` (and over `ε` for the power
//! bound) are taken on a log-spaced grid and then refined by golden-section
//! search around the best grid point. Every evaluated point is admissible, so
//! a reported value is always a valid upper approximation of the infimum.

use std::fmt::Write as _;

use crate::coefficients::AssumptionConstants;
use crate::error::{Error, Result};
use crate::segment::SegmentPath;

/// `|K4 s|` below which [`k4_ratio`] uses its Taylor expansion.
const K4_TAYLOR: f64 = 1e-6;
/// Decades spanned by the log-spaced search grids.
const GRID_DECADES: f64 = 6.0;
const GOLDEN_ITERS: usize = 80;
/// Smallest `ε` on the search grid.
const EPS_FLOOR: f64 = 1e-6;

pub const DEFAULT_GRID_SIZE: usize = 200;

/// `|ξ(0) − η(0)|` and `‖ξ − η‖∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapPair {
    pub point_gap: f64,
    pub seg_gap: f64,
}

impl GapPair {
    pub fn new(point_gap: f64, seg_gap: f64) -> Result<Self> {
        if !(point_gap >= 0.0 && seg_gap.is_finite() && point_gap <= seg_gap) {
            return Err(Error::Domain(format!(
                "gaps must satisfy 0 <= point_gap <= seg_gap, got ({point_gap}, {seg_gap})"
            )));
        }
        Ok(Self { point_gap, seg_gap })
    }

    pub fn zero() -> Self {
        Self {
            point_gap: 0.0,
            seg_gap: 0.0,
        }
    }

    pub fn from_segments(xi: &SegmentPath, eta: &SegmentPath) -> Result<Self> {
        let seg_gap = xi.sup_distance(eta)?;
        let point_gap = xi
            .current()
            .iter()
            .zip(eta.current())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        // The sup over grid points already includes the current point.
        Ok(Self {
            point_gap: point_gap.min(seg_gap),
            seg_gap,
        })
    }
}

/// Result of a bound evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub name: &'static str,
    pub value: f64,
    pub s_star: f64,
    pub eps_star: Option<f64>,
    /// Summands at the minimizer, before any common prefactor.
    pub terms: Vec<(&'static str, f64)>,
    pub s_grid_size: usize,
    pub eps_grid_size: usize,
    /// The minimizer sits on the lower edge of the `ε` grid, so the true
    /// infimum is approached but not attained.
    pub open_infimum: bool,
}

impl BoundReport {
    /// Two-column `field,value` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("field,value\n");
        let _ = writeln!(out, "bound,{}", self.name);
        let _ = writeln!(out, "value,{}", self.value);
        let _ = writeln!(out, "s_star,{}", self.s_star);
        if let Some(e) = self.eps_star {
            let _ = writeln!(out, "eps_star,{e}");
        }
        for (name, v) in &self.terms {
            let _ = writeln!(out, "term_{name},{v}");
        }
        let _ = writeln!(out, "s_grid_size,{}", self.s_grid_size);
        if self.eps_star.is_some() {
            let _ = writeln!(out, "eps_grid_size,{}", self.eps_grid_size);
        }
        let _ = writeln!(out, "open_infimum,{}", self.open_infimum);
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!("{} = {:.10}\n  argmin s = {:.6}", self.name, self.value, self.s_star);
        if let Some(e) = self.eps_star {
            let _ = write!(out, ", eps = {e:.6}");
        }
        out.push('\n');
        for (name, v) in &self.terms {
            let _ = writeln!(out, "  {name:<14} {v:.10}");
        }
        if self.open_infimum {
            out.push_str("  note: infimum is approached at the lower edge of the eps grid\n");
        }
        out
    }
}

/// `K4 / (1 − e^{−K4 s})`, which tends to `1/s` as `K4 → 0`.
pub fn k4_ratio(k4: f64, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::InvalidParameter {
            name: "s".into(),
            value: s,
            reason: "must be positive".into(),
        });
    }
    let x = k4 * s;
    if x.abs() < K4_TAYLOR {
        Ok((1.0 + x / 2.0 + x * x / 12.0) / s)
    } else {
        Ok(-k4 / (-x).exp_m1())
    }
}

fn check_horizon(t_end: f64, r0: f64) -> Result<()> {
    if !(t_end > r0) {
        return Err(Error::HorizonTooShort { t_end, r0 });
    }
    Ok(())
}

fn check_grid_size(n: usize, name: &str) -> Result<()> {
    if n < 3 {
        return Err(Error::InvalidParameter {
            name: name.into(),
            value: n as f64,
            reason: "grid needs at least 3 points".into(),
        });
    }
    Ok(())
}

/// Log-spaced points on `(lo, hi]` with `hi` included.
fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let ratio = (hi / lo).ln();
    (0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                lo * (ratio * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

fn golden_min(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERS {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Grid search plus golden-section refinement in the bracket around the best
/// grid point. Returns `(argmin, min, grid index of the best grid point)`.
fn minimize_on_grid(f: &impl Fn(f64) -> f64, grid: &[f64]) -> (f64, f64, usize) {
    let (mut best_i, mut best_v) = (0, f64::INFINITY);
    for (i, &s) in grid.iter().enumerate() {
        let v = f(s);
        if v < best_v {
            best_i = i;
            best_v = v;
        }
    }
    let lo = grid[best_i.saturating_sub(1)];
    let hi = grid[(best_i + 1).min(grid.len() - 1)];
    let (s_ref, v_ref) = golden_min(f, lo, hi);
    if v_ref < best_v {
        (s_ref, v_ref, best_i)
    } else {
        (grid[best_i], best_v, best_i)
    }
}

fn h_t_terms(c: &AssumptionConstants, gaps: GapPair, r0: f64, s: f64) -> (f64, f64) {
    let first = 2.0 * c.k3 * c.k3 * gaps.point_gap.powi(2) * k4_ratio(c.k4, s).unwrap_or(f64::INFINITY);
    let k2sq = c.k2 * c.k2;
    let second = c.k1 * c.k1
        * (r0 / 2.0 + s * (1.0 + k2sq * c.k3 * c.k3))
        * (k2sq * (c.k1 * c.k1 * s + 8.0) * s).exp()
        * gaps.seg_gap.powi(2);
    (first, second)
}

/// The log-Harnack constant `H_T(ξ, η)`, an infimum over `s ∈ (0, T − r0]`.
pub fn bound_h_t(
    consts: &AssumptionConstants,
    gaps: GapPair,
    t_end: f64,
    r0: f64,
    s_grid_size: usize,
) -> Result<BoundReport> {
    consts.validate()?;
    check_horizon(t_end, r0)?;
    check_grid_size(s_grid_size, "s_grid_size")?;
    let s_max = t_end - r0;
    let f = |s: f64| {
        let (a, b) = h_t_terms(consts, gaps, r0, s);
        a + b
    };
    let grid = log_grid(s_max * 10f64.powf(-GRID_DECADES), s_max, s_grid_size);
    let (s_star, value, _) = minimize_on_grid(&f, &grid);
    let (first, second) = h_t_terms(consts, gaps, r0, s_star);
    Ok(BoundReport {
        name: "H_T",
        value,
        s_star,
        eps_star: None,
        terms: vec![("point_gap", first), ("segment_gap", second)],
        s_grid_size,
        eps_grid_size: 0,
        open_infimum: false,
    })
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta < 2.0) {
        return Err(Error::InvalidParameter {
            name: "theta".into(),
            value: theta,
            reason: "must lie in (0, 2)".into(),
        });
    }
    Ok(())
}

/// Entropy bound for `R_t` with coupling time `t0`:
/// `2K3²K4|ξ(0)−η(0)|²/(θ(2−θ)(1−e^{−K4 t0})) + tK1²(1+K2²K3²)e^{K2²(K1²t+8)t}‖ξ−η‖∞²/θ²`.
pub fn bound_entropy_prop21(
    consts: &AssumptionConstants,
    theta: f64,
    t: f64,
    t0: f64,
    gaps: GapPair,
) -> Result<f64> {
    check_theta(theta)?;
    if !(t > 0.0) {
        return Err(Error::InvalidParameter {
            name: "t".into(),
            value: t,
            reason: "must be positive".into(),
        });
    }
    let c = consts;
    let first = 2.0 * c.k3 * c.k3 * gaps.point_gap.powi(2) * k4_ratio(c.k4, t0)?
        / (theta * (2.0 - theta));
    let k2sq = c.k2 * c.k2;
    let second = t * c.k1 * c.k1 * (1.0 + k2sq * c.k3 * c.k3)
        * (k2sq * (c.k1 * c.k1 * t + 8.0) * t).exp()
        / (theta * theta)
        * gaps.seg_gap.powi(2);
    Ok(first + second)
}

/// Entropy bound for `R_T` when the pair is merged at `t0 ≤ T − r0`: the
/// `θ = 1` bound at `t0` plus the delay tail `(K1² r0/2) e^{K2²(K1² t0+8)t0} ‖ξ−η‖∞²`.
pub fn bound_entropy_terminal(
    consts: &AssumptionConstants,
    t0: f64,
    r0: f64,
    gaps: GapPair,
) -> Result<f64> {
    let c = consts;
    let k2sq = c.k2 * c.k2;
    let tail = c.k1 * c.k1 * r0 / 2.0
        * (k2sq * (c.k1 * c.k1 * t0 + 8.0) * t0).exp()
        * gaps.seg_gap.powi(2);
    Ok(bound_entropy_prop21(consts, 1.0, t0, t0, gaps)? + tail)
}

/// `λ_p = 1/(2(√p − 1)²)`
pub fn lambda_p(p: f64) -> Result<f64> {
    if !(p > 1.0) {
        return Err(Error::InvalidParameter {
            name: "p".into(),
            value: p,
            reason: "must exceed 1".into(),
        });
    }
    let r = p.sqrt() - 1.0;
    Ok(1.0 / (2.0 * r * r))
}

/// `(1 + K2 K3)²`, the smallest power for which the power-Harnack bound holds.
pub fn power_threshold(consts: &AssumptionConstants) -> f64 {
    (1.0 + consts.k2 * consts.k3).powi(2)
}

fn check_power(p: f64, consts: &AssumptionConstants) -> Result<()> {
    let threshold = power_threshold(consts);
    if !(p > threshold) {
        return Err(Error::PowerOutOfRange { p, threshold });
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter {
            name: "eps".into(),
            value: eps,
            reason: "must lie in (0, 1)".into(),
        });
    }
    Ok(())
}

fn theta_lhs(eps: f64, consts: &AssumptionConstants) -> f64 {
    let kk = consts.k2 * consts.k3;
    if kk == 0.0 {
        return f64::INFINITY;
    }
    (1.0 - eps).powi(4) / (2.0 * (1.0 + eps).powi(3) * kk * kk)
}

/// Whether `ε` is admissible for the power `p`:
/// `(1−ε)⁴/(2(1+ε)³K2²K3²) ≥ λ_p`.
pub fn theta_set_contains(eps: f64, p: f64, consts: &AssumptionConstants) -> Result<bool> {
    check_eps(eps)?;
    check_power(p, consts)?;
    Ok(theta_lhs(eps, consts) >= lambda_p(p)?)
}

/// Upper end of the admissible `ε` interval. The left side of the membership
/// test decreases in `ε`, so the set is `(0, ε_max]`.
fn theta_set_sup(lam: f64, consts: &AssumptionConstants) -> Result<f64> {
    if consts.k2 * consts.k3 == 0.0 {
        return Ok(1.0);
    }
    if theta_lhs(0.0, consts) < lam {
        return Err(Error::EmptyThetaSet);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if theta_lhs(mid, consts) >= lam {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// `W_ε(λ)`, the largest of the three exponent multipliers produced by the
/// lemmas.
pub fn w_eps(eps: f64, lam: f64, consts: &AssumptionConstants, r0: f64) -> f64 {
    let (k1, k2, k3) = (consts.k1, consts.k2, consts.k3);
    let e1 = 1.0 + eps;
    let a = 8.0 * e1 * r0 * k1.powi(3) * k2 * lam * (4.0 * e1 * r0 * k1 * k2 * lam + eps) / (eps * eps);
    let b = 2.0 * e1 * e1 * lam / (eps * eps);
    let c = e1.powi(3) * (k1 * k2 * k3).powi(2) * lam / (8.0 * eps * eps * (1.0 - eps).powi(3));
    a.max(b).max(c)
}

/// `s_ε(λ) = (√(K1² + 2W) − K1)/(4 W K2)`, or `+∞` when `K2 = 0`.
pub fn s_eps(eps: f64, lam: f64, consts: &AssumptionConstants, r0: f64) -> f64 {
    if consts.k2 == 0.0 {
        return f64::INFINITY;
    }
    let w = w_eps(eps, lam, consts, r0);
    let k1 = consts.k1;
    // Rationalized form avoids cancellation when W is small against K1².
    2.0 / (4.0 * consts.k2 * ((k1 * k1 + 2.0 * w).sqrt() + k1))
}

struct PhiTerms {
    eps_term: f64,
    k2_term: f64,
    point_term: f64,
    seg_term: f64,
}

impl PhiTerms {
    fn sum(&self) -> f64 {
        self.eps_term + self.k2_term + self.point_term + self.seg_term
    }
}

fn phi_terms(
    eps: f64,
    s: f64,
    lam: f64,
    consts: &AssumptionConstants,
    gaps: GapPair,
    r0: f64,
) -> PhiTerms {
    let (k1, k2, k3) = (consts.k1, consts.k2, consts.k3);
    let w = w_eps(eps, lam, consts, r0);
    let k2_term = if k2 == 0.0 {
        0.0
    } else {
        16.0 * k2 * k2 * s * s * w / (1.0 - 4.0 * k1 * k2 * s)
    };
    let point_term = if gaps.point_gap == 0.0 {
        0.0
    } else {
        lam * (1.0 + eps).powi(2) * k3 * k3 * gaps.point_gap.powi(2)
            * k4_ratio(consts.k4, s).unwrap_or(f64::INFINITY)
            / (2.0 * eps * (1.0 - eps).powi(2) * (1.0 + 2.0 * eps))
    };
    PhiTerms {
        eps_term: eps / (2.0 * (1.0 + eps)),
        k2_term,
        point_term,
        seg_term: (k1 * k1 * r0 * lam + 2.0 * s * w) * gaps.seg_gap.powi(2),
    }
}

/// Largest admissible `s` for a given `ε`.
fn s_cap(eps: f64, lam: f64, consts: &AssumptionConstants, r0: f64, horizon: f64) -> f64 {
    s_eps(eps, lam, consts, r0).min(horizon)
}

/// The power-Harnack exponent `Φ_p(T, ξ, η)`, an infimum over admissible
/// `ε` and `s ∈ (0, s_ε(λ_p) ∧ (T − r0)]`.
pub fn bound_phi_p(
    p: f64,
    t_end: f64,
    consts: &AssumptionConstants,
    gaps: GapPair,
    r0: f64,
    eps_grid_size: usize,
    s_grid_size: usize,
) -> Result<BoundReport> {
    consts.validate()?;
    check_horizon(t_end, r0)?;
    check_power(p, consts)?;
    check_grid_size(eps_grid_size, "eps_grid_size")?;
    check_grid_size(s_grid_size, "s_grid_size")?;
    let lam = lambda_p(p)?;
    let horizon = t_end - r0;
    let eps_hi = theta_set_sup(lam, consts)?.min(1.0 - 1e-9);
    if eps_hi <= EPS_FLOOR {
        return Err(Error::EmptyThetaSet);
    }
    let prefactor = (p.sqrt() - 1.0) / p.sqrt();

    let best_s = |eps: f64| -> (f64, f64) {
        let cap = s_cap(eps, lam, consts, r0, horizon);
        let f = |s: f64| phi_terms(eps, s, lam, consts, gaps, r0).sum();
        let grid = log_grid(cap * 10f64.powf(-GRID_DECADES), cap, s_grid_size);
        let (s, v, _) = minimize_on_grid(&f, &grid);
        (s, v)
    };
    let inner = |eps: f64| best_s(eps).1;
    let eps_grid = log_grid(EPS_FLOOR, eps_hi, eps_grid_size);
    let (eps_star, _, eps_index) = minimize_on_grid(&inner, &eps_grid);
    let (s_star, raw) = best_s(eps_star);
    let terms = phi_terms(eps_star, s_star, lam, consts, gaps, r0);
    Ok(BoundReport {
        name: "Phi_p",
        value: prefactor * raw,
        s_star,
        eps_star: Some(eps_star),
        terms: vec![
            ("eps", terms.eps_term),
            ("k2", terms.k2_term),
            ("point_gap", terms.point_term),
            ("segment_gap", terms.seg_term),
            ("prefactor", prefactor),
        ],
        s_grid_size,
        eps_grid_size,
        open_infimum: eps_index == 0,
    })
}

/// Which exponential-moment lemma to evaluate, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LemmaParams {
    /// `E_Q exp(λ ∫_0^s |X − Y|²/γ² dt)` under the schedule `θ = 2(1 − ε)`
    /// with coupling time `t0`.
    Weighted { lambda: f64, eps: f64, t0: f64, gaps: GapPair },
    /// `E_Q exp(λ ‖X_s − Y_s‖∞²)`
    SegmentAt { lambda: f64, gaps: GapPair },
    /// `E_Q exp(λ ∫_0^s ‖X_t − Y_t‖∞² dt)`
    SegmentIntegral { lambda: f64, s: f64, gaps: GapPair },
}

/// Right-hand side `prefactor · (E_Q exp(inner_multiplier · ∫_0^s ‖X_t − Y_t‖∞² dt))^inner_power`.
/// For the segment-integral lemma the right side is deterministic and
/// `inner_multiplier` is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaRhs {
    pub prefactor: f64,
    pub inner_multiplier: f64,
    pub inner_power: f64,
}

impl LemmaRhs {
    pub fn evaluate(&self, inner_expectation: f64) -> f64 {
        self.prefactor * inner_expectation.powf(self.inner_power)
    }
}

/// Largest `λ` allowed by the segment-integral lemma at time `s`.
pub fn lemma_segment_integral_cap(consts: &AssumptionConstants, s: f64) -> f64 {
    let (k1, k2) = (consts.k1, consts.k2);
    if k2 == 0.0 {
        return f64::INFINITY;
    }
    (1.0 - 4.0 * k1 * k2 * s) / (8.0 * k2 * k2 * s * s)
}

fn check_lambda(lambda: f64, allow_zero: bool) -> Result<()> {
    let ok = if allow_zero { lambda >= 0.0 } else { lambda > 0.0 };
    if !(ok && lambda.is_finite()) {
        return Err(Error::LemmaConstraint(format!(
            "lambda = {lambda} must be {}",
            if allow_zero { "nonnegative" } else { "positive" }
        )));
    }
    Ok(())
}

pub fn lemma_rhs(params: LemmaParams, consts: &AssumptionConstants) -> Result<LemmaRhs> {
    let (k1, k2) = (consts.k1, consts.k2);
    match params {
        LemmaParams::Weighted {
            lambda,
            eps,
            t0,
            gaps,
        } => {
            check_lambda(lambda, false)?;
            check_eps(eps)?;
            if k2 != 0.0 {
                let cap = (1.0 - eps).powi(4) / (2.0 * k2 * k2 * (1.0 + eps));
                if lambda > cap {
                    return Err(Error::LemmaConstraint(format!(
                        "lambda = {lambda} exceeds (1-eps)^4/(2 K2^2 (1+eps)) = {cap}"
                    )));
                }
            }
            // With θ = 2(1 − ε), 1/γ(0) = K4/(2ε(1 − e^{−K4 t0})).
            let inv_gamma0 = k4_ratio(consts.k4, t0)? / (2.0 * eps);
            let exponent = lambda * (1.0 + eps) * gaps.point_gap.powi(2) * inv_gamma0
                / ((1.0 + 2.0 * eps) * (1.0 - eps).powi(2));
            Ok(LemmaRhs {
                prefactor: exponent.exp(),
                inner_multiplier: k1 * k1 * k2 * k2 * (1.0 + eps) * lambda
                    / (8.0 * eps * eps * (1.0 - eps).powi(3)),
                inner_power: eps / (1.0 + 2.0 * eps),
            })
        }
        LemmaParams::SegmentAt { lambda, gaps } => {
            check_lambda(lambda, true)?;
            Ok(LemmaRhs {
                prefactor: (1.0 + lambda * gaps.seg_gap.powi(2)).exp(),
                inner_multiplier: 4.0 * lambda * k2 * (2.0 * lambda * k2 + k1),
                inner_power: 0.5,
            })
        }
        LemmaParams::SegmentIntegral { lambda, s, gaps } => {
            check_lambda(lambda, false)?;
            if !(s > 0.0) {
                return Err(Error::LemmaConstraint(format!("s = {s} must be positive")));
            }
            let denom = 1.0 - 4.0 * k1 * k2 * s;
            if !(denom > 0.0) {
                return Err(Error::LemmaConstraint(format!(
                    "1 - 4 K1 K2 s = {denom} must be positive"
                )));
            }
            let cap = lemma_segment_integral_cap(consts, s);
            if lambda > cap * (1.0 + 1e-12) {
                return Err(Error::LemmaConstraint(format!(
                    "lambda = {lambda} exceeds (1 - 4 K1 K2 s)/(8 K2^2 s^2) = {cap}"
                )));
            }
            let exponent =
                16.0 * k2 * k2 * s * s * lambda / denom + 2.0 * s * lambda * gaps.seg_gap.powi(2);
            Ok(LemmaRhs {
                prefactor: exponent.exp(),
                inner_multiplier: 0.0,
                inner_power: 0.0,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn k(k1: f64, k2: f64, k3: f64, k4: f64) -> AssumptionConstants {
        AssumptionConstants::new(k1, k2, k3, k4).unwrap()
    }

    fn unit_gaps() -> GapPair {
        GapPair::new(1.0, 1.0).unwrap()
    }

    #[test]
    fn k4_ratio_examples() {
        assert_eq!(k4_ratio(0.0, 1.0).unwrap(), 1.0);
        assert!((k4_ratio(1.0, 1.0).unwrap() - 1.581_976_706_869_326_5).abs() < 1e-12);
        assert!((k4_ratio(-1.0, 1.0).unwrap() - 0.581_976_706_869_326_5).abs() < 1e-12);
        assert!(k4_ratio(1.0, 0.0).is_err());
        for s in [0.1f64, 1.0, 10.0] {
            let direct = 1e-8 / -(-1e-8 * s).exp_m1();
            let taylor = k4_ratio(1e-8, s).unwrap();
            assert!((direct - taylor).abs() / taylor <= 1e-6);
        }
    }

    #[test]
    fn h_t_examples() {
        let r = bound_h_t(&k(1.0, 0.0, 1.0, 1.0), unit_gaps(), 2.0, 1.0, 200).unwrap();
        assert!((r.value - 4.663_953_413_738_653).abs() < 1e-9);
        assert!((r.s_star - 1.0).abs() < 1e-9);
        let r = bound_h_t(&k(1.0, 0.0, 1.0, -1.0), unit_gaps(), 2.0, 1.0, 200).unwrap();
        assert!((r.value - 2.663_953_413_738_653).abs() < 1e-9);
        let r = bound_h_t(&k(1.0, 0.3, 1.0, 1.0), GapPair::zero(), 2.0, 1.0, 200).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(matches!(
            bound_h_t(&k(1.0, 0.0, 1.0, 1.0), unit_gaps(), 1.0, 1.0, 200),
            Err(Error::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn h_t_interior_minimum_is_refined() {
        // With a large point gap and K2 > 0 the minimizer is interior.
        let c = k(1.0, 0.5, 1.0, 0.0);
        let gaps = GapPair::new(1.0, 1.0).unwrap();
        let r = bound_h_t(&c, gaps, 3.0, 1.0, 200).unwrap();
        let dense = (1..=200_000)
            .map(|i| {
                let s = 2.0 * i as f64 / 200_000.0;
                let (a, b) = h_t_terms(&c, gaps, 1.0, s);
                a + b
            })
            .fold(f64::INFINITY, f64::min);
        assert!(r.s_star < 2.0);
        assert!(r.value <= dense + 1e-9);
        assert!((r.value - dense).abs() / dense < 1e-6);
    }

    #[test]
    fn prop21_examples() {
        let c = k(1.0, 0.0, 1.0, 1.0);
        let v = bound_entropy_prop21(&c, 1.0, 1.0, 1.0, unit_gaps()).unwrap();
        assert!((v - 4.163_953_413_738_653).abs() < 1e-12);
        assert_eq!(bound_entropy_prop21(&c, 1.0, 1.0, 1.0, GapPair::zero()).unwrap(), 0.0);
        let at = |th| bound_entropy_prop21(&c, th, 1.0, 1.0, unit_gaps()).unwrap();
        assert!(at(1.0) <= at(0.5) && at(1.0) <= at(1.5));
        assert!(bound_entropy_prop21(&c, 2.0, 1.0, 1.0, unit_gaps()).is_err());

        let lin = k(0.5, 0.0, 1.0, -2.0);
        let term = bound_entropy_terminal(&lin, 1.0, 1.0, unit_gaps()).unwrap();
        assert!((term - 1.001_070_570_998_662_5).abs() < 1e-12);
        let half = bound_entropy_prop21(&lin, 1.0, 0.5, 1.0, unit_gaps()).unwrap();
        assert!((half - 0.751_070_570_998_662_6).abs() < 1e-12);
    }

    #[test]
    fn lambda_and_theta_set() {
        assert_eq!(lambda_p(4.0).unwrap(), 0.5);
        assert_eq!(lambda_p(9.0).unwrap(), 0.125);
        assert!(lambda_p(1e12).unwrap() < 1e-11);
        assert!(lambda_p(1.0).is_err());

        let free = k(1.0, 0.0, 1.0, 1.0);
        assert!([0.01, 0.5, 0.99].iter().all(|&e| theta_set_contains(e, 2.0, &free).unwrap()));
        let c = k(1.0, 0.5, 1.0, 1.0);
        assert!(theta_set_contains(0.01, 4.0, &c).unwrap());
        assert!(!theta_set_contains(0.999, 4.0, &c).unwrap());
        assert!(matches!(
            theta_set_contains(0.1, 2.25, &c),
            Err(Error::PowerOutOfRange { .. })
        ));
        assert!((theta_lhs(0.01, &c) - 1.864_690_046_889_209_8).abs() < 1e-12);
    }

    #[test]
    fn w_and_s_examples() {
        let c = k(1.0, 0.1, 1.0, 0.0);
        assert!((w_eps(0.5, 0.5, &c, 1.0) - 9.0).abs() < 1e-12);
        assert!((s_eps(0.5, 0.5, &c, 1.0) - 0.933_027_484_316_853_9).abs() < 1e-12);
        assert_eq!(s_eps(0.5, 0.5, &k(1.0, 0.0, 1.0, 0.0), 1.0), f64::INFINITY);
    }

    #[test]
    fn phi_p_examples() {
        let free = k(1.0, 0.0, 1.0, 1.0);
        let r = bound_phi_p(4.0, 2.0, &free, GapPair::zero(), 1.0, 200, 200).unwrap();
        assert!(r.open_infimum);
        assert!(r.value > 0.0 && r.value < 1e-5);

        let c = k(1.0, 0.1, 1.0, 1.0);
        let r = bound_phi_p(9.0, 2.0, &c, unit_gaps(), 1.0, 200, 200).unwrap();
        assert!(r.value.is_finite() && r.value > 0.0);
        let (eps, s) = (r.eps_star.unwrap(), r.s_star);
        let lam = lambda_p(9.0).unwrap();
        assert!(s <= s_eps(eps, lam, &c, 1.0) && 1.0 - 4.0 * 0.1 * s > 0.0);
        assert!(theta_set_contains(eps, 9.0, &c).unwrap());

        // Independent dense grid, 10x finer, over the admissible region.
        let pre = (3.0 - 1.0) / 3.0;
        let mut dense = f64::INFINITY;
        for i in 1..2000 {
            let e = i as f64 / 2000.0;
            if !theta_set_contains(e, 9.0, &c).unwrap() {
                continue;
            }
            let cap = s_eps(e, lam, &c, 1.0).min(1.0);
            for j in 1..=2000 {
                let s = cap * j as f64 / 2000.0;
                dense = dense.min(pre * phi_terms(e, s, lam, &c, unit_gaps(), 1.0).sum());
            }
        }
        assert!(r.value <= dense * (1.0 + 1e-9));
        assert!((r.value - dense).abs() / dense < 1e-3);

        let at = |p| bound_phi_p(p, 2.0, &c, unit_gaps(), 1.0, 200, 200).unwrap().value;
        let (v4, v9, v16) = (at(4.0), at(9.0), at(16.0));
        assert!(v4 >= v9 && v9 >= v16);

        let c = k(1.0, 0.5, 1.0, 1.0);
        assert!(matches!(
            bound_phi_p(2.25, 2.0, &c, unit_gaps(), 1.0, 50, 50),
            Err(Error::PowerOutOfRange { .. })
        ));
        assert!(bound_phi_p(9.0, 1.0, &c, unit_gaps(), 1.0, 50, 50).is_err());
    }

    #[test]
    fn grid_refinement_is_stable() {
        let cases = [k(1.0, 0.0, 1.0, 1.0), k(0.5, 0.0, 1.0, -2.0), k(2.0, 0.2, 10.0, -1.99)];
        for c in cases {
            let a = bound_h_t(&c, unit_gaps(), 2.0, 1.0, 200).unwrap().value;
            let b = bound_h_t(&c, unit_gaps(), 2.0, 1.0, 400).unwrap().value;
            assert!((a - b).abs() <= 1e-4 * a.abs());
            let p = power_threshold(&c) + 7.0;
            let a = bound_phi_p(p, 2.0, &c, unit_gaps(), 1.0, 200, 200).unwrap().value;
            let b = bound_phi_p(p, 2.0, &c, unit_gaps(), 1.0, 400, 400).unwrap().value;
            assert!((a - b).abs() <= 1e-4 * a.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn lemma_examples() {
        let c = k(1.0, 0.1, 1.0, 1.0);
        let s = 0.5;
        let cap = lemma_segment_integral_cap(&c, s);
        assert!((cap - 40.0).abs() < 1e-12);
        let seg0 = lemma_rhs(
            LemmaParams::SegmentIntegral { lambda: cap, s, gaps: GapPair::zero() },
            &c,
        )
        .unwrap();
        assert!((seg0.prefactor - 2f64.exp()).abs() < 1e-12);
        let g = 0.3;
        let r = lemma_rhs(
            LemmaParams::SegmentIntegral { lambda: cap, s, gaps: GapPair::new(g, g).unwrap() },
            &c,
        )
        .unwrap();
        assert!((r.prefactor - (2.0 + 40.0 * g * g).exp()).abs() < 1e-9);
        assert!(lemma_rhs(
            LemmaParams::SegmentIntegral { lambda: cap * 1.01, s, gaps: GapPair::zero() },
            &c
        )
        .is_err());

        let r = lemma_rhs(LemmaParams::SegmentAt { lambda: 0.0, gaps: unit_gaps() }, &c).unwrap();
        assert_eq!(r.prefactor, 1f64.exp());
        assert_eq!(r.inner_multiplier, 0.0);
        assert_eq!(r.evaluate(1.0), 1f64.exp());

        let eps: f64 = 0.1;
        let max = (1.0 - eps).powi(4) / (2.0 * 0.01 * (1.0 + eps));
        assert!(lemma_rhs(
            LemmaParams::Weighted { lambda: max * 1.1, eps, t0: 0.5, gaps: unit_gaps() },
            &c
        )
        .is_err());
        let r = lemma_rhs(
            LemmaParams::Weighted { lambda: 1.0, eps, t0: 0.5, gaps: GapPair::zero() },
            &c,
        )
        .unwrap();
        assert_eq!(r.prefactor, 1.0);
        assert!((r.inner_power - 0.1 / 1.2).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn h_t_vanishes_on_the_diagonal_and_is_monotone(
            k1 in 0.0..2.0f64, k2 in 0.0..0.5f64, k3 in 0.1..3.0f64, k4 in -3.0..3.0f64,
            a in 0.0..2.0f64, b in 0.0..2.0f64, extra in 0.0..1.0f64,
        ) {
            let c = k(k1, k2, k3, k4);
            prop_assert_eq!(bound_h_t(&c, GapPair::zero(), 2.0, 1.0, 50).unwrap().value, 0.0);
            let (pg, sg) = (a.min(b), a.max(b));
            let base = bound_h_t(&c, GapPair::new(pg, sg).unwrap(), 2.0, 1.0, 50).unwrap().value;
            let more_seg = bound_h_t(&c, GapPair::new(pg, sg + extra).unwrap(), 2.0, 1.0, 50).unwrap().value;
            let more_pt = bound_h_t(&c, GapPair::new((pg + extra).min(sg + extra), sg + extra).unwrap(), 2.0, 1.0, 50).unwrap().value;
            prop_assert!(more_seg >= base * (1.0 - 1e-12));
            prop_assert!(more_pt >= base * (1.0 - 1e-12));
        }

        #[test]
        fn h_t_nonincreasing_in_horizon(
            k1 in 0.0..2.0f64, k2 in 0.0..0.5f64, k4 in -3.0..3.0f64, extra in 0.0..3.0f64,
        ) {
            let c = k(k1, k2, 1.0, k4);
            let short = bound_h_t(&c, unit_gaps(), 1.5, 1.0, 100).unwrap().value;
            let long = bound_h_t(&c, unit_gaps(), 1.5 + extra, 1.0, 100).unwrap().value;
            prop_assert!(long <= short * (1.0 + 1e-8));
        }

        #[test]
        fn k4_ratio_is_positive_and_continuous(k4 in -5.0..5.0f64, s in 0.01..10.0f64) {
            let v = k4_ratio(k4, s).unwrap();
            prop_assert!(v > 0.0);
            let near = k4_ratio(k4 + 1e-9, s).unwrap();
            prop_assert!((v - near).abs() <= 1e-6 * v.max(1.0));
        }
    }
}
