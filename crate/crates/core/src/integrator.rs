//! Euler–Maruyama for the uncoupled delay equation. The delay term reads the
//! rolling grid segment directly; `r0` is a multiple of `h`, so no
//! interpolation is involved.

use std::fmt::Write as _;

use crate::coefficients::CoefficientSet;
use crate::error::{ensure_finite, Error, Result};
use crate::linalg;
use crate::rng::NoiseStream;
use crate::segment::{GridSpec, RollingHistory, SegmentPath, SegmentView};

/// Grid values of one simulated path at times `0, h, ..., T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: GridSpec,
    dim: usize,
    points: Vec<f64>,
    increments: Option<Vec<f64>>,
}

impl Trajectory {
    pub(crate) fn from_parts(
        grid: GridSpec,
        dim: usize,
        points: Vec<f64>,
        increments: Option<Vec<f64>>,
    ) -> Self {
        debug_assert_eq!(points.len(), (grid.n_steps() + 1) * dim);
        Self {
            grid,
            dim,
            points,
            increments,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    pub fn endpoint(&self) -> &[f64] {
        self.point(self.len() - 1)
    }

    /// Brownian increments, if the path was simulated with recording on.
    pub fn increments(&self) -> Option<&[f64]> {
        self.increments.as_deref()
    }

    /// The segment `X_t` at grid index `k`, falling back on the initial
    /// segment for times before 0.
    pub fn segment_at(&self, k: usize, initial: &SegmentPath) -> SegmentPath {
        let m = initial.m();
        let mut values = Vec::with_capacity((m + 1) * self.dim);
        // Combined index j covers initial[0..=m] followed by points[1..].
        for j in k..=k + m {
            if j <= m {
                values.extend_from_slice(initial.point(j));
            } else {
                values.extend_from_slice(self.point(j - m));
            }
        }
        SegmentPath::from_values(initial.r0(), m, self.dim, values)
            .expect("trajectory values are finite")
    }

    /// The functional solution `X_T`.
    pub fn terminal_segment(&self, initial: &SegmentPath) -> SegmentPath {
        self.segment_at(self.len() - 1, initial)
    }

    /// CSV rows `step,t,x1..xd`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,t");
        for k in 1..=self.dim {
            let _ = write!(out, ",x{k}");
        }
        out.push('\n');
        for k in 0..self.len() {
            let _ = write!(out, "{k},{}", self.grid.time(k));
            for v in self.point(k) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Scratch buffers for one Euler step.
#[derive(Debug, Clone)]
pub(crate) struct StepWork {
    pub sigma: Vec<f64>,
    pub z: Vec<f64>,
    pub b: Vec<f64>,
}

impl StepWork {
    pub fn new(dim: usize) -> Self {
        Self {
            sigma: vec![0.0; dim * dim],
            z: vec![0.0; dim],
            b: vec![0.0; dim],
        }
    }
}

/// `out = x + (Z(t, x) + b(t, seg)) h + σ(t, x) dW`
#[allow(clippy::too_many_arguments)]
pub(crate) fn step_euler_into(
    t: f64,
    x: &[f64],
    seg: &SegmentView<'_>,
    dw: &[f64],
    h: f64,
    coeffs: &CoefficientSet,
    work: &mut StepWork,
    out: &mut [f64],
) {
    coeffs.z_into(t, x, &mut work.z);
    coeffs.b_into(t, seg, &mut work.b);
    coeffs.sigma_into(t, x, &mut work.sigma);
    for i in 0..x.len() {
        out[i] = x[i] + (work.z[i] + work.b[i]) * h;
    }
    linalg::mat_vec_acc(&work.sigma, dw, 1.0, out);
}

/// One explicit Euler–Maruyama step of the delay equation.
pub fn step_euler(
    t: f64,
    x: &[f64],
    seg: &SegmentView<'_>,
    dw: &[f64],
    h: f64,
    coeffs: &CoefficientSet,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter {
            name: "h".into(),
            value: h,
            reason: "step must be positive".into(),
        });
    }
    ensure_finite("Brownian increment", 0, dw)?;
    let d = coeffs.dim();
    if x.len() != d || dw.len() != d || seg.dim() != d {
        return Err(Error::Domain(format!("dimension mismatch: system has d = {d}")));
    }
    let mut work = StepWork::new(d);
    let mut out = vec![0.0; d];
    step_euler_into(t, x, seg, dw, h, coeffs, &mut work, &mut out);
    ensure_finite("Euler step", 0, &out)?;
    Ok(out)
}

fn simulate(
    coeffs: &CoefficientSet,
    xi: &SegmentPath,
    grid: &GridSpec,
    seed: u64,
    path_index: u64,
    record: bool,
) -> Result<Trajectory> {
    grid.check_segment(xi)?;
    let d = coeffs.dim();
    if xi.dim() != d {
        return Err(Error::Domain(format!(
            "initial segment has d = {}, system has d = {d}",
            xi.dim()
        )));
    }
    let h = grid.h();
    let n = grid.n_steps();
    let mut noise = NoiseStream::new(seed, path_index, d, h);
    let mut history = RollingHistory::new(xi);
    let mut points = Vec::with_capacity((n + 1) * d);
    points.extend_from_slice(xi.current());
    let mut increments = record.then(|| Vec::with_capacity(n * d));
    let mut work = StepWork::new(d);
    let mut dw = vec![0.0; d];
    let mut x = xi.current().to_vec();
    let mut next = vec![0.0; d];
    for k in 0..n {
        noise.increment(k as u64, &mut dw);
        step_euler_into(grid.time(k), &x, &history.view(), &dw, h, coeffs, &mut work, &mut next);
        ensure_finite("state", k + 1, &next)?;
        std::mem::swap(&mut x, &mut next);
        history.push(&x);
        points.extend_from_slice(&x);
        if let Some(inc) = increments.as_mut() {
            inc.extend_from_slice(&dw);
        }
    }
    Ok(Trajectory::from_parts(*grid, d, points, increments))
}

/// Simulates `X^ξ` on `grid`. The result depends only on the arguments, so
/// paths can run concurrently in any order.
pub fn simulate_path(
    coeffs: &CoefficientSet,
    xi: &SegmentPath,
    grid: &GridSpec,
    seed: u64,
    path_index: u64,
) -> Result<Trajectory> {
    simulate(coeffs, xi, grid, seed, path_index, false)
}

/// As [`simulate_path`], also keeping the Brownian increments.
pub fn simulate_path_recording(
    coeffs: &CoefficientSet,
    xi: &SegmentPath,
    grid: &GridSpec,
    seed: u64,
    path_index: u64,
) -> Result<Trajectory> {
    simulate(coeffs, xi, grid, seed, path_index, true)
}
