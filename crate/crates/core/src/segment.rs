//! The segment space `C([-r0, 0]; R^d)` discretized on a uniform grid, the
//! rolling history that turns a trajectory into its functional solution, and
//! the time grid shared by every simulation.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg;

/// A grid-sampled segment: `m + 1` points of `R^d` at relative times
/// `-r0, -r0 + h, ..., 0` with `h = r0 / m`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPath {
    r0: f64,
    m: usize,
    dim: usize,
    values: Vec<f64>,
}

impl SegmentPath {
    /// Builds a segment from row-major values (`(m + 1) * dim` entries).
    pub fn from_values(r0: f64, m: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "r0".into(),
                value: r0,
                reason: "delay horizon must be positive and finite".into(),
            });
        }
        if m == 0 || dim == 0 {
            return Err(Error::Domain(format!(
                "segment needs m >= 1 and d >= 1 (got m = {m}, d = {dim})"
            )));
        }
        if values.len() != (m + 1) * dim {
            return Err(Error::Domain(format!(
                "segment expects {} values, got {}",
                (m + 1) * dim,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "segment value".into(),
                step: i / dim,
            });
        }
        Ok(Self { r0, m, dim, values })
    }

    /// Samples `f` at the `m + 1` grid times of `[-r0, 0]`.
    pub fn from_function<F>(f: F, dim: usize, r0: f64, m: usize) -> Result<Self>
    where
        F: Fn(f64, &mut [f64]),
    {
        if m == 0 {
            return Err(Error::Domain("segment needs m >= 1".into()));
        }
        let h = r0 / m as f64;
        let mut values = vec![0.0; (m + 1) * dim];
        for (i, chunk) in values.chunks_mut(dim).enumerate() {
            let u = if i == m { 0.0 } else { -r0 + i as f64 * h };
            f(u, chunk);
        }
        Self::from_values(r0, m, dim, values)
    }

    /// The constant segment `u ↦ value`.
    pub fn constant(value: &[f64], r0: f64, m: usize) -> Result<Self> {
        Self::from_function(|_, out| out.copy_from_slice(value), value.len(), r0, m)
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> f64 {
        self.r0 / self.m as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Point `i` of the grid; `0` is relative time `-r0`, `m` is time `0`.
    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// The value at relative time 0.
    pub fn current(&self) -> &[f64] {
        self.point(self.m)
    }

    pub fn view(&self) -> SegmentView<'_> {
        SegmentView {
            data: &self.values,
            start: 0,
            len: self.m + 1,
            dim: self.dim,
            step: self.step(),
        }
    }

    pub fn same_grid(&self, other: &SegmentPath) -> bool {
        self.m == other.m && self.dim == other.dim && self.r0 == other.r0
    }

    /// `‖self − other‖∞` over the grid points.
    pub fn sup_distance(&self, other: &SegmentPath) -> Result<f64> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch(format!(
                "(r0, m, d) = ({}, {}, {}) vs ({}, {}, {})",
                self.r0, self.m, self.dim, other.r0, other.m, other.dim
            )));
        }
        Ok(self
            .values
            .chunks(self.dim)
            .zip(other.values.chunks(self.dim))
            .map(|(a, b)| linalg::distance(a, b))
            .fold(0.0, f64::max))
    }

    /// Drops the oldest point and appends `new_point` at relative time 0.
    pub fn shift_append(&self, new_point: &[f64]) -> Result<SegmentPath> {
        if new_point.len() != self.dim {
            return Err(Error::Domain(format!(
                "point has dimension {}, segment has {}",
                new_point.len(),
                self.dim
            )));
        }
        if new_point.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "appended point".into(),
                step: self.m,
            });
        }
        let mut values = Vec::with_capacity(self.values.len());
        values.extend_from_slice(&self.values[self.dim..]);
        values.extend_from_slice(new_point);
        Ok(SegmentPath {
            r0: self.r0,
            m: self.m,
            dim: self.dim,
            values,
        })
    }

    /// CSV rows `offset,x1,...,xd` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("offset");
        for k in 1..=self.dim {
            let _ = write!(out, ",x{k}");
        }
        out.push('\n');
        let h = self.step();
        for i in 0..=self.m {
            let u = if i == self.m { 0.0 } else { -self.r0 + i as f64 * h };
            let _ = write!(out, "{u}");
            for v in self.point(i) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses the format written by [`SegmentPath::to_csv`]. Offsets must be
    /// uniformly spaced and end at 0; `r0` and `m` are inferred.
    pub fn from_csv(text: &str) -> Result<SegmentPath> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            match fields {
                Ok(f) => rows.push(f),
                Err(_) if rows.is_empty() => continue, // header
                Err(e) => {
                    return Err(Error::Domain(format!(
                        "segment csv line {}: {e}",
                        lineno + 1
                    )))
                }
            }
        }
        if rows.len() < 2 {
            return Err(Error::Domain("segment csv needs at least two rows".into()));
        }
        let width = rows[0].len();
        if width < 2 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::Domain("segment csv rows must share one width >= 2".into()));
        }
        let dim = width - 1;
        let m = rows.len() - 1;
        let r0 = -rows[0][0];
        let h = r0 / m as f64;
        for (i, r) in rows.iter().enumerate() {
            let expected = -r0 + i as f64 * h;
            if (r[0] - expected).abs() > 1e-9 * r0.max(1.0) {
                return Err(Error::GridMismatch(format!(
                    "offset {} at row {i} is off the uniform grid (expected {expected})",
                    r[0]
                )));
            }
        }
        let values = rows.iter().flat_map(|r| r[1..].iter().copied()).collect();
        SegmentPath::from_values(r0, m, dim, values)
    }
}

/// Borrowed read access to a segment, possibly stored in a ring buffer.
#[derive(Debug, Clone, Copy)]
pub struct SegmentView<'a> {
    data: &'a [f64],
    start: usize,
    len: usize,
    dim: usize,
    step: f64,
}

impl<'a> SegmentView<'a> {
    pub fn m(&self) -> usize {
        self.len - 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Point `i`; `0` is relative time `-r0`, `m` is time `0`.
    pub fn point(&self, i: usize) -> &'a [f64] {
        debug_assert!(i < self.len);
        let slot = (self.start + i) % self.len;
        &self.data[slot * self.dim..(slot + 1) * self.dim]
    }

    /// The value `lag` grid steps before relative time 0.
    pub fn lagged(&self, lag: usize) -> &'a [f64] {
        self.point(self.len - 1 - lag)
    }

    pub fn current(&self) -> &'a [f64] {
        self.point(self.len - 1)
    }

    pub fn oldest(&self) -> &'a [f64] {
        self.point(0)
    }

    /// Euclidean norm maximized over the grid.
    pub fn sup_norm(&self) -> f64 {
        (0..self.len)
            .map(|i| linalg::norm(self.point(i)))
            .fold(0.0, f64::max)
    }

    pub fn to_segment(&self) -> SegmentPath {
        let mut values = Vec::with_capacity(self.len * self.dim);
        for i in 0..self.len {
            values.extend_from_slice(self.point(i));
        }
        SegmentPath {
            r0: self.step * (self.len - 1) as f64,
            m: self.len - 1,
            dim: self.dim,
            values,
        }
    }
}

/// Ring buffer holding the current segment `X_t` of a running trajectory.
#[derive(Debug, Clone)]
pub struct RollingHistory {
    data: Vec<f64>,
    start: usize,
    len: usize,
    dim: usize,
    step: f64,
}

impl RollingHistory {
    pub fn new(initial: &SegmentPath) -> Self {
        Self {
            data: initial.values.clone(),
            start: 0,
            len: initial.m + 1,
            dim: initial.dim,
            step: initial.step(),
        }
    }

    /// Drops the oldest point and appends `point` as the new current value.
    pub fn push(&mut self, point: &[f64]) {
        let slot = self.start;
        self.data[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(point);
        self.start = (self.start + 1) % self.len;
    }

    /// Overwrites the current (relative time 0) value in place.
    pub fn set_current(&mut self, point: &[f64]) {
        let slot = (self.start + self.len - 1) % self.len;
        self.data[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(point);
    }

    pub fn view(&self) -> SegmentView<'_> {
        SegmentView {
            data: &self.data,
            start: self.start,
            len: self.len,
            dim: self.dim,
            step: self.step,
        }
    }
}

/// Uniform time grid with `h = r0 / m`, total horizon `T = n_steps · h`, and
/// an optional coupling time `t0` on the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    r0: f64,
    t_end: f64,
    m: usize,
    h: f64,
    n_steps: usize,
    t0_step: Option<usize>,
}

impl GridSpec {
    pub fn new(r0: f64, t_end: f64, m: usize) -> Result<Self> {
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "r0".into(),
                value: r0,
                reason: "must be positive".into(),
            });
        }
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "T".into(),
                value: t_end,
                reason: "must be positive".into(),
            });
        }
        if m == 0 {
            return Err(Error::Domain("m must be a positive integer".into()));
        }
        let h = r0 / m as f64;
        let steps = (t_end / h).round();
        if (steps * h - t_end).abs() > 1e-12 * t_end || steps < 1.0 {
            return Err(Error::GridMismatch(format!(
                "T = {t_end} is not an integer multiple of h = r0/m = {h}"
            )));
        }
        Ok(Self {
            r0,
            t_end,
            m,
            h,
            n_steps: steps as usize,
            t0_step: None,
        })
    }

    /// Places the coupling time `t0` on the grid.
    pub fn with_t0(mut self, t0: f64) -> Result<Self> {
        self.t0_step = Some(self.index_of(t0, "t0")?);
        if t0 <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "t0".into(),
                value: t0,
                reason: "must be positive".into(),
            });
        }
        Ok(self)
    }

    /// Grid index of `t`, which must lie on the grid within `1e-12 · T`.
    pub fn index_of(&self, t: f64, name: &str) -> Result<usize> {
        let k = (t / self.h).round();
        if !(0.0..=self.n_steps as f64).contains(&k)
            || (k * self.h - t).abs() > 1e-12 * self.t_end.max(1.0)
        {
            return Err(Error::GridMismatch(format!(
                "{name} = {t} is not a grid time in [0, {}] (h = {})",
                self.t_end, self.h
            )));
        }
        Ok(k as usize)
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn t0(&self) -> Option<f64> {
        self.t0_step.map(|k| self.time(k))
    }

    pub fn t0_step(&self) -> Option<usize> {
        self.t0_step
    }

    /// Time of grid index `k`, computed as `k · h` so that every module
    /// agrees on the clock.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.h
    }

    pub fn check_segment(&self, seg: &SegmentPath) -> Result<()> {
        if seg.m() != self.m || (seg.r0() - self.r0).abs() > 1e-12 * self.r0 {
            return Err(Error::GridMismatch(format!(
                "segment has (r0, m) = ({}, {}), grid has ({}, {})",
                seg.r0(),
                seg.m(),
                self.r0,
                self.m
            )));
        }
        Ok(())
    }
}
