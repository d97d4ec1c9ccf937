//! Coupling by change of measure.
//!
//! The follower process is pushed toward the leader by the singular drift
//! `(X − Y)/γ(t)`, where `γ` vanishes at the coupling time `t0`. The drift is
//! not discretized explicitly. Each step applies the regular part of the
//! dynamics by Euler–Maruyama and then multiplies the gap by the exact
//! integrating factor `exp(−∫ 1/γ)` over the step. On the last step before
//! `t0` that factor is zero, so the pair meets at `t0` and is merged.
//!
//! Two drivers are provided. [`simulate_coupled_p`] runs under the original
//! measure `P` (`X` is the solution from `ξ`, `Y` is the coupled process).
//! [`simulate_coupled_q`] runs under the reweighted measure `Q`, in which
//! `Y` is the solution from `η` and `X` carries the coupling drift. Both keep
//! `log R_t` and `∫|φ|²` along the path.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::coefficients::CoefficientSet;
use crate::error::{ensure_finite, Error, Result};
use crate::integrator::Trajectory;
use crate::linalg;
use crate::rng::NoiseStream;
use crate::segment::{GridSpec, RollingHistory, SegmentPath, SegmentView};

/// Below this value of `|K4|·t0` the closed forms switch to their `K4 → 0`
/// limits.
const K4_LIMIT: f64 = 1e-6;

/// Default relative gap tolerated when merging the pair at `t0`.
pub const DEFAULT_DELTA_MERGE: f64 = 1e-8;

/// `γ(t) = ((2 − θ)/K4)(1 − e^{(t − t0)K4})` on `[0, t0]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaSchedule {
    theta: f64,
    k4: f64,
    t0: f64,
}

impl GammaSchedule {
    pub fn new(theta: f64, k4: f64, t0: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < 2.0) {
            return Err(Error::InvalidParameter {
                name: "theta".into(),
                value: theta,
                reason: "must lie in (0, 2)".into(),
            });
        }
        if !k4.is_finite() {
            return Err(Error::InvalidParameter {
                name: "K4".into(),
                value: k4,
                reason: "must be finite".into(),
            });
        }
        if !(t0 > 0.0 && t0.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "t0".into(),
                value: t0,
                reason: "must be positive".into(),
            });
        }
        Ok(Self { theta, k4, t0 })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn k4(&self) -> f64 {
        self.k4
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    fn limit_branch(&self) -> bool {
        (self.k4 * self.t0).abs() < K4_LIMIT
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.t0).contains(&t) {
            return Err(Error::Domain(format!(
                "gamma is defined on [0, {}], got t = {t}",
                self.t0
            )));
        }
        Ok(())
    }

    pub fn gamma(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.gamma_unchecked(t))
    }

    fn gamma_unchecked(&self, t: f64) -> f64 {
        let two_minus = 2.0 - self.theta;
        if self.limit_branch() {
            two_minus * (self.t0 - t)
        } else {
            -two_minus / self.k4 * ((t - self.t0) * self.k4).exp_m1()
        }
    }

    /// `∫_{t_a}^{t_b} dt / γ(t)` for `0 ≤ t_a ≤ t_b < t0`.
    pub fn inv_gamma_integral(&self, t_a: f64, t_b: f64) -> Result<f64> {
        if !(t_a >= 0.0 && t_a <= t_b) {
            return Err(Error::Domain(format!(
                "need 0 <= t_a <= t_b, got [{t_a}, {t_b}]"
            )));
        }
        if t_b >= self.t0 {
            return Err(Error::DivergentIntegral {
                t_a,
                t_b,
                t0: self.t0,
            });
        }
        if t_a == t_b {
            return Ok(0.0);
        }
        let (ua, ub) = (self.t0 - t_a, self.t0 - t_b);
        let log_ratio = if self.limit_branch() {
            (ua / ub).ln()
        } else {
            ((self.k4 * ua).exp_m1() / (self.k4 * ub).exp_m1()).ln()
        };
        Ok(log_ratio / (2.0 - self.theta))
    }

    /// `exp(−∫_{t_a}^{t_b} 1/γ)`, which is exactly zero once `t_b ≥ t0`.
    pub fn contraction(&self, t_a: f64, t_b: f64) -> f64 {
        if t_b >= self.t0 {
            return 0.0;
        }
        let (ua, ub) = (self.t0 - t_a, self.t0 - t_b);
        let ratio = if self.limit_branch() {
            ub / ua
        } else {
            (self.k4 * ub).exp_m1() / (self.k4 * ua).exp_m1()
        };
        ratio.powf(1.0 / (2.0 - self.theta))
    }
}

pub fn gamma(t: f64, sched: &GammaSchedule) -> Result<f64> {
    sched.gamma(t)
}

pub fn inv_gamma_integral(t_a: f64, t_b: f64, sched: &GammaSchedule) -> Result<f64> {
    sched.inv_gamma_integral(t_a, t_b)
}

/// `φ_t = σ(Y)⁻¹(b(Y_t) − b(X_t)) − 1_{t<t0} σ(X)⁻¹(X − Y)/γ(t)`
pub fn coupling_drift_phi(
    t: f64,
    x_seg: &SegmentView<'_>,
    y_seg: &SegmentView<'_>,
    coeffs: &CoefficientSet,
    sched: &GammaSchedule,
) -> Result<Vec<f64>> {
    let d = coeffs.dim();
    if x_seg.m() != y_seg.m() || x_seg.dim() != d || y_seg.dim() != d {
        return Err(Error::GridMismatch(
            "segments must share the grid and the dimension of the system".into(),
        ));
    }
    let mut work = vec![0.0; d * d];
    let mut bx = vec![0.0; d];
    let mut by = vec![0.0; d];
    coeffs.b_into(t, x_seg, &mut bx);
    coeffs.b_into(t, y_seg, &mut by);
    let diff: Vec<f64> = by.iter().zip(&bx).map(|(a, b)| a - b).collect();
    let mut phi = vec![0.0; d];
    coeffs.solve_sigma_into(t, y_seg.current(), &diff, &mut phi, &mut work)?;
    if t < sched.t0() {
        let gap: Vec<f64> = x_seg
            .current()
            .iter()
            .zip(y_seg.current())
            .map(|(a, b)| a - b)
            .collect();
        let mut w = vec![0.0; d];
        coeffs.solve_sigma_into(t, x_seg.current(), &gap, &mut w, &mut work)?;
        let inv_g = 1.0 / sched.gamma(t)?;
        for (p, wi) in phi.iter_mut().zip(&w) {
            *p -= inv_g * wi;
        }
    }
    Ok(phi)
}

/// The measure a coupled pair is simulated under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    P,
    Q,
}

impl Measure {
    pub fn tag(&self) -> &'static str {
        match self {
            Measure::P => "P",
            Measure::Q => "Q",
        }
    }
}

/// A γ schedule together with the merge tolerance used at `t0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupling {
    pub schedule: GammaSchedule,
    pub delta_merge: f64,
}

impl Coupling {
    pub fn new(schedule: GammaSchedule) -> Self {
        Self {
            schedule,
            delta_merge: DEFAULT_DELTA_MERGE,
        }
    }

    pub fn with_delta_merge(mut self, delta: f64) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "delta_merge".into(),
                value: delta,
                reason: "must be a finite nonnegative number".into(),
            });
        }
        self.delta_merge = delta;
        Ok(self)
    }
}

/// Both processes of a coupled run, with the path functionals accumulated
/// along the way. All per-step vectors are indexed by grid step `0..=n`.
/// Integrals use the left-point rule, so entry `k` covers `[0, kh]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledTrajectory {
    pub x: Trajectory,
    pub y: Trajectory,
    /// `|φ|²` evaluated at each grid time.
    pub phi_sq: Vec<f64>,
    /// `∫_0^t |φ|² ds`.
    pub phi_sq_cum: Vec<f64>,
    /// `log R_t`.
    pub log_weight: Vec<f64>,
    /// `‖X_t − Y_t‖∞` over grid segments.
    pub seg_gap: Vec<f64>,
    /// `∫_0^t ‖X_s − Y_s‖∞² ds`.
    pub seg_gap_sq_cum: Vec<f64>,
    /// `∫_0^{t ∧ t0} |X − Y|²/γ² ds`.
    pub weighted_gap_cum: Vec<f64>,
    /// Grid step at which the pair was merged.
    pub merge_step: Option<usize>,
    pub merged: bool,
    pub measure: Measure,
    pub schedule: GammaSchedule,
}

impl CoupledTrajectory {
    pub fn n_steps(&self) -> usize {
        self.phi_sq_cum.len() - 1
    }

    pub fn phi_sq_integral(&self) -> f64 {
        self.phi_sq_cum[self.n_steps()]
    }

    pub fn log_weight_end(&self) -> f64 {
        self.log_weight[self.n_steps()]
    }

    /// `R_T`, exponentiated only here.
    pub fn weight_end(&self) -> f64 {
        self.log_weight_end().exp()
    }

    pub fn tau(&self) -> Option<f64> {
        self.merge_step.map(|k| self.x.grid().time(k))
    }

    pub fn gap(&self, k: usize) -> f64 {
        linalg::distance(self.x.point(k), self.y.point(k))
    }

    /// CSV rows `step,t,x1..xd,y1..yd,gap,gamma,phi_sq,log_weight`. The
    /// `gamma` column is empty after `t0`.
    pub fn to_csv(&self) -> String {
        let d = self.x.dim();
        let mut out = String::from("step,t");
        for k in 1..=d {
            let _ = write!(out, ",x{k}");
        }
        for k in 1..=d {
            let _ = write!(out, ",y{k}");
        }
        out.push_str(",gap,gamma,phi_sq,log_weight\n");
        let grid = self.x.grid();
        for k in 0..=self.n_steps() {
            let t = grid.time(k);
            let _ = write!(out, "{k},{t}");
            for v in self.x.point(k).iter().chain(self.y.point(k)) {
                let _ = write!(out, ",{v}");
            }
            let _ = write!(out, ",{}", self.gap(k));
            match self.schedule.gamma(t) {
                Ok(g) => {
                    let _ = write!(out, ",{g}");
                }
                Err(_) => out.push(','),
            }
            let _ = writeln!(out, ",{},{}", self.phi_sq[k], self.log_weight[k]);
        }
        out
    }
}

/// First grid time with `|X − Y| ≤ δ(1 + |X|)`.
pub fn coupling_time(traj: &CoupledTrajectory, delta: f64) -> Option<f64> {
    (0..=traj.n_steps())
        .find(|&k| {
            let x = traj.x.point(k);
            traj.gap(k) <= delta * (1.0 + linalg::norm(x))
        })
        .map(|k| traj.x.grid().time(k))
}

/// Running maximum of `|X − Y|` over the last `m + 1` grid points.
struct WindowMax {
    window: usize,
    deque: VecDeque<(usize, f64)>,
}

impl WindowMax {
    fn new(window: usize) -> Self {
        Self {
            window,
            deque: VecDeque::with_capacity(window + 1),
        }
    }

    fn push(&mut self, index: usize, value: f64) {
        while self.deque.back().is_some_and(|&(_, v)| v <= value) {
            self.deque.pop_back();
        }
        self.deque.push_back((index, value));
        while self.deque.front().is_some_and(|&(i, _)| i + self.window <= index) {
            self.deque.pop_front();
        }
    }

    fn max(&self) -> f64 {
        self.deque.front().map_or(0.0, |&(_, v)| v)
    }
}

struct Work {
    d: usize,
    sig_x: Vec<f64>,
    sig_y: Vec<f64>,
    inv: Vec<f64>,
    zx: Vec<f64>,
    zy: Vec<f64>,
    bx: Vec<f64>,
    by: Vec<f64>,
    diff: Vec<f64>,
    u: Vec<f64>,
    w: Vec<f64>,
    phi: Vec<f64>,
    dw: Vec<f64>,
    x_new: Vec<f64>,
    y_new: Vec<f64>,
}

impl Work {
    fn new(d: usize) -> Self {
        let v = || vec![0.0; d];
        Self {
            d,
            sig_x: vec![0.0; d * d],
            sig_y: vec![0.0; d * d],
            inv: vec![0.0; d * d],
            zx: v(),
            zy: v(),
            bx: v(),
            by: v(),
            diff: v(),
            u: v(),
            w: v(),
            phi: v(),
            dw: v(),
            x_new: v(),
            y_new: v(),
        }
    }

    /// Fills `bx`, `by`, `u` and `phi` (and `w` before `t0`) at time `t`.
    /// Returns `1/γ(t)` when the stiff term is active, else 0.
    fn drift_phi(
        &mut self,
        t: f64,
        x: &[f64],
        y: &[f64],
        hx: &SegmentView<'_>,
        hy: &SegmentView<'_>,
        coeffs: &CoefficientSet,
        stiff: Option<f64>,
    ) -> Result<f64> {
        coeffs.b_into(t, hx, &mut self.bx);
        coeffs.b_into(t, hy, &mut self.by);
        for i in 0..self.d {
            self.diff[i] = self.by[i] - self.bx[i];
        }
        coeffs.solve_sigma_into(t, y, &self.diff, &mut self.u, &mut self.inv)?;
        self.phi.copy_from_slice(&self.u);
        match stiff {
            Some(inv_g) => {
                for i in 0..self.d {
                    self.diff[i] = x[i] - y[i];
                }
                coeffs.solve_sigma_into(t, x, &self.diff, &mut self.w, &mut self.inv)?;
                for i in 0..self.d {
                    self.phi[i] -= inv_g * self.w[i];
                }
                Ok(inv_g)
            }
            None => Ok(0.0),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate_coupled(
    coeffs: &CoefficientSet,
    xi: &SegmentPath,
    eta: &SegmentPath,
    coupling: &Coupling,
    grid: &GridSpec,
    seed: u64,
    path_index: u64,
    measure: Measure,
) -> Result<CoupledTrajectory> {
    let d = coeffs.dim();
    grid.check_segment(xi)?;
    grid.check_segment(eta)?;
    if xi.dim() != d || eta.dim() != d {
        return Err(Error::Domain(format!(
            "initial segments must have dimension {d}"
        )));
    }
    let sched = &coupling.schedule;
    let k0 = grid.index_of(sched.t0(), "t0")?;
    let (m, n, h) = (grid.m(), grid.n_steps(), grid.h());
    if k0 == 0 || k0 + m > n {
        return Err(Error::Domain(format!(
            "coupling time t0 = {} must lie in (0, T - r0] = (0, {}]",
            sched.t0(),
            grid.t_end() - grid.r0()
        )));
    }

    let mut noise = NoiseStream::new(seed, path_index, d, h);
    let mut hx = RollingHistory::new(xi);
    let mut hy = RollingHistory::new(eta);
    let mut w = Work::new(d);
    let mut x = xi.current().to_vec();
    let mut y = eta.current().to_vec();

    let mut window = WindowMax::new(m + 1);
    for i in 0..=m {
        window.push(i, linalg::distance(xi.point(i), eta.point(i)));
    }

    let cap = n + 1;
    let mut xs = Vec::with_capacity(cap * d);
    let mut ys = Vec::with_capacity(cap * d);
    let mut phi_sq = Vec::with_capacity(cap);
    let mut phi_sq_cum = Vec::with_capacity(cap);
    let mut log_weight = Vec::with_capacity(cap);
    let mut seg_gap = Vec::with_capacity(cap);
    let mut seg_gap_sq_cum = Vec::with_capacity(cap);
    let mut weighted_gap_cum = Vec::with_capacity(cap);
    xs.extend_from_slice(&x);
    ys.extend_from_slice(&y);
    phi_sq_cum.push(0.0);
    log_weight.push(0.0);
    seg_gap.push(window.max());
    seg_gap_sq_cum.push(0.0);
    weighted_gap_cum.push(0.0);

    let mut merge_step = (x == y).then_some(0);
    let mut failed = false;
    let (mut cum_phi, mut cum_log, mut cum_seg, mut cum_wgap) = (0.0, 0.0, 0.0, 0.0);

    for k in 0..n {
        let t = grid.time(k);
        let merged = merge_step.is_some();
        let stiff = (!merged && k < k0).then(|| 1.0 / sched.gamma_unchecked(t));
        let inv_g = w.drift_phi(t, &x, &y, &hx.view(), &hy.view(), coeffs, stiff)?;
        let p2 = linalg::norm_sq(&w.phi);
        phi_sq.push(p2);

        let g = window.max();
        cum_seg += g * g * h;
        if stiff.is_some() {
            let gap_sq: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
            cum_wgap += gap_sq * inv_g * inv_g * h;
        }

        noise.increment(k as u64, &mut w.dw);
        let dot = linalg::dot(&w.phi, &w.dw);
        cum_log += match measure {
            Measure::P => dot - 0.5 * p2 * h,
            Measure::Q => dot + 0.5 * p2 * h,
        };
        cum_phi += p2 * h;

        coeffs.z_into(t, &x, &mut w.zx);
        coeffs.z_into(t, &y, &mut w.zy);
        coeffs.sigma_into(t, &x, &mut w.sig_x);
        coeffs.sigma_into(t, &y, &mut w.sig_y);

        match (measure, merged) {
            (Measure::Q, true) => {
                euler(&y, &w.zy, &w.by, &w.sig_y, &w.dw, h, &mut w.y_new);
                w.x_new.copy_from_slice(&w.y_new);
            }
            (Measure::P, true) => {
                euler(&x, &w.zx, &w.bx, &w.sig_x, &w.dw, h, &mut w.x_new);
                w.y_new.copy_from_slice(&w.x_new);
            }
            (Measure::Q, false) => {
                euler(&y, &w.zy, &w.by, &w.sig_y, &w.dw, h, &mut w.y_new);
                // X drift: Z(X) + b(Y_t) + (σ(X) − σ(Y))u, stiff part below.
                for i in 0..d {
                    w.x_new[i] = x[i] + (w.zx[i] + w.by[i]) * h;
                }
                linalg::mat_vec_acc(&w.sig_x, &w.u, h, &mut w.x_new);
                linalg::mat_vec_acc(&w.sig_y, &w.u, -h, &mut w.x_new);
                linalg::mat_vec_acc(&w.sig_x, &w.dw, 1.0, &mut w.x_new);
                if stiff.is_some() {
                    let factor = if k + 1 >= k0 {
                        0.0
                    } else {
                        sched.contraction(t, grid.time(k + 1))
                    };
                    for i in 0..d {
                        let gap = (w.x_new[i] - w.y_new[i]) * factor;
                        w.x_new[i] = w.y_new[i] + gap;
                    }
                }
            }
            (Measure::P, false) => {
                euler(&x, &w.zx, &w.bx, &w.sig_x, &w.dw, h, &mut w.x_new);
                // Y drift: Z(Y) + b(X_t) + (σ(Y) − σ(X))w/γ, stiff part below.
                for i in 0..d {
                    w.y_new[i] = y[i] + (w.zy[i] + w.bx[i]) * h;
                }
                if stiff.is_some() {
                    linalg::mat_vec_acc(&w.sig_y, &w.w, inv_g * h, &mut w.y_new);
                    linalg::mat_vec_acc(&w.sig_x, &w.w, -inv_g * h, &mut w.y_new);
                }
                linalg::mat_vec_acc(&w.sig_y, &w.dw, 1.0, &mut w.y_new);
                if stiff.is_some() {
                    let factor = if k + 1 >= k0 {
                        0.0
                    } else {
                        sched.contraction(t, grid.time(k + 1))
                    };
                    for i in 0..d {
                        let gap = (w.x_new[i] - w.y_new[i]) * factor;
                        w.y_new[i] = w.x_new[i] - gap;
                    }
                }
            }
        }
        ensure_finite("coupled state X", k + 1, &w.x_new)?;
        ensure_finite("coupled state Y", k + 1, &w.y_new)?;

        if merge_step.is_none() && !failed {
            if k + 1 == k0 {
                let rel = linalg::distance(&w.x_new, &w.y_new);
                if rel <= coupling.delta_merge * (1.0 + linalg::norm(&w.x_new)) {
                    merge_roles(measure, &mut w.x_new, &mut w.y_new);
                    merge_step = Some(k + 1);
                } else {
                    failed = true;
                }
            } else if w.x_new == w.y_new {
                merge_step = Some(k + 1);
            }
        }

        std::mem::swap(&mut x, &mut w.x_new);
        std::mem::swap(&mut y, &mut w.y_new);
        hx.push(&x);
        hy.push(&y);
        window.push(m + 1 + k, linalg::distance(&x, &y));
        seg_gap.push(window.max());
        xs.extend_from_slice(&x);
        ys.extend_from_slice(&y);
        phi_sq_cum.push(cum_phi);
        log_weight.push(cum_log);
        seg_gap_sq_cum.push(cum_seg);
        weighted_gap_cum.push(cum_wgap);
    }

    // |φ|² at T, for the trajectory dump.
    let stiff = (merge_step.is_none() && n < k0).then(|| 1.0 / sched.gamma_unchecked(grid.time(n)));
    w.drift_phi(grid.time(n), &x, &y, &hx.view(), &hy.view(), coeffs, stiff)?;
    phi_sq.push(linalg::norm_sq(&w.phi));

    Ok(CoupledTrajectory {
        x: Trajectory::from_parts(*grid, d, xs, None),
        y: Trajectory::from_parts(*grid, d, ys, None),
        phi_sq,
        phi_sq_cum,
        log_weight,
        seg_gap,
        seg_gap_sq_cum,
        weighted_gap_cum,
        merge_step,
        merged: merge_step.is_some(),
        measure,
        schedule: *sched,
    })
}

/// The follower takes the leader's value.
fn merge_roles(measure: Measure, x: &mut [f64], y: &mut [f64]) {
    match measure {
        Measure::Q => x.copy_from_slice(y),
        Measure::P => y.copy_from_slice(x),
    }
}

fn euler(x: &[f64], z: &[f64], b: &[f64], sigma: &[f64], dw: &[f64], h: f64, out: &mut [f64]) {
    for i in 0..x.len() {
        out[i] = x[i] + (z[i] + b[i]) * h;
    }
    linalg::mat_vec_acc(sigma, dw, 1.0, out);
}

/// Coupled pair under the original measure. `X` is the solution from `ξ`
/// and uses exactly the increments of [`crate::integrator::simulate_path`]
/// with the same key.
pub fn simulate_coupled_p(
    coeffs: &CoefficientSet,
    xi: &SegmentPath,
    eta: &SegmentPath,
    coupling: &Coupling,
    grid: &GridSpec,
    seed: u64,
    path_index: u64,
) -> Result<CoupledTrajectory> {
    simulate_coupled(coeffs, xi, eta, coupling, grid, seed, path_index, Measure::P)
}

/// Coupled pair under `Q`. `Y` is the solution from `η` driven by the
/// `Q`-Brownian motion, and matches `simulate_path(η)` with the same key.
pub fn simulate_coupled_q(
    coeffs: &CoefficientSet,
    xi: &SegmentPath,
    eta: &SegmentPath,
    coupling: &Coupling,
    grid: &GridSpec,
    seed: u64,
    path_index: u64,
) -> Result<CoupledTrajectory> {
    simulate_coupled(coeffs, xi, eta, coupling, grid, seed, path_index, Measure::Q)
}
