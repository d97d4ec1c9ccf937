//! Coefficients `(σ, Z, b)` of the delay equation
//!
//! ```text
//! dX(t) = { Z(t, X(t)) + b(t, X_t) } dt + σ(t, X(t)) dB(t)
//! ```
//!
//! together with the declared assumption constants `K1..K4`, a catalog of
//! built-in systems, and a sampling auditor that can falsify (never prove) the
//! declared constants.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::CounterRng;
use crate::segment::{SegmentPath, SegmentView};

/// `σ(t, x)` written row-major into a `d × d` buffer.
pub type MatrixFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
/// `Z(t, x)` written into a length-`d` buffer.
pub type VectorFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
/// `b(t, ξ)` for a segment `ξ`.
pub type DelayFn = dyn Fn(f64, &SegmentView<'_>, &mut [f64]) + Send + Sync;

/// Declared constants of the standing assumption:
///
/// * `k1`: `|σ(t, η(0))⁻¹ (b(t, ξ) − b(t, η))| ≤ K1 ‖ξ − η‖∞`
/// * `k2`: `‖σ(t, x) − σ(t, y)‖ ≤ K2 (1 ∧ |x − y|)`
/// * `k3`: `‖σ(t, x)⁻¹‖ ≤ K3`
/// * `k4`: `‖σ(t, x) − σ(t, y)‖²_HS + 2⟨x − y, Z(t, x) − Z(t, y)⟩ ≤ K4 |x − y|²`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionConstants {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
}

impl AssumptionConstants {
    pub fn new(k1: f64, k2: f64, k3: f64, k4: f64) -> Result<Self> {
        let c = Self { k1, k2, k3, k4 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, ok: bool, reason: &str| {
            if v.is_finite() && ok {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name: name.into(),
                    value: v,
                    reason: reason.into(),
                })
            }
        };
        check("K1", self.k1, self.k1 >= 0.0, "must be finite and >= 0")?;
        check("K2", self.k2, self.k2 >= 0.0, "must be finite and >= 0")?;
        check("K3", self.k3, self.k3 > 0.0, "must be finite and > 0")?;
        check("K4", self.k4, true, "must be finite")
    }
}

/// The coefficient triple with its declared constants. Cheap to clone; all
/// evaluations are pure.
#[derive(Clone)]
pub struct CoefficientSet {
    dim: usize,
    sigma: Arc<MatrixFn>,
    sigma_inverse: Option<Arc<MatrixFn>>,
    z_drift: Arc<VectorFn>,
    b_delay: Arc<DelayFn>,
    constants: AssumptionConstants,
    noise_scale: f64,
    delay_free: bool,
    autonomous: bool,
    label: String,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("constants", &self.constants)
            .field("noise_scale", &self.noise_scale)
            .finish()
    }
}

impl CoefficientSet {
    pub fn new<S, Z, B>(
        dim: usize,
        sigma: S,
        z_drift: Z,
        b_delay: B,
        constants: AssumptionConstants,
    ) -> Result<Self>
    where
        S: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        Z: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        B: Fn(f64, &SegmentView<'_>, &mut [f64]) + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::Domain("dimension must be positive".into()));
        }
        constants.validate()?;
        Ok(Self {
            dim,
            sigma: Arc::new(sigma),
            sigma_inverse: None,
            z_drift: Arc::new(z_drift),
            b_delay: Arc::new(b_delay),
            constants,
            noise_scale: 1.0,
            delay_free: false,
            autonomous: false,
            label: "custom".into(),
        })
    }

    /// Supplies `σ(t, x)⁻¹` directly so that solves become products.
    pub fn with_sigma_inverse<F>(mut self, inverse: F) -> Self
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.sigma_inverse = Some(Arc::new(inverse));
        self
    }

    /// Scales the diffusion by `scale`. A scale of 0 turns the equation into
    /// a deterministic delay ODE (useful for testing the drift alone); any
    /// operation needing `σ⁻¹` then fails with a singularity error.
    pub fn with_noise_scale(mut self, scale: f64) -> Self {
        self.noise_scale = scale;
        self
    }

    /// Declares `b ≡ 0`.
    pub fn mark_delay_free(mut self) -> Self {
        self.delay_free = true;
        self
    }

    /// Declares that `σ` and `Z` do not depend on time.
    pub fn mark_autonomous(mut self) -> Self {
        self.autonomous = true;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_constants(mut self, constants: AssumptionConstants) -> Result<Self> {
        constants.validate()?;
        self.constants = constants;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constants(&self) -> AssumptionConstants {
        self.constants
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_delay_free(&self) -> bool {
        self.delay_free
    }

    pub fn is_autonomous(&self) -> bool {
        self.autonomous
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn sigma_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.sigma)(t, x, out);
        if self.noise_scale != 1.0 {
            out.iter_mut().for_each(|v| *v *= self.noise_scale);
        }
    }

    pub fn sigma(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.sigma_into(t, x, &mut out);
        out
    }

    pub fn z_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.z_drift)(t, x, out);
    }

    pub fn b_into(&self, t: f64, seg: &SegmentView<'_>, out: &mut [f64]) {
        (self.b_delay)(t, seg, out);
    }

    pub fn b(&self, t: f64, seg: &SegmentPath) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.b_into(t, &seg.view(), &mut out);
        out
    }

    /// Writes `σ(t, x)⁻¹ v` into `out`, either through the supplied inverse
    /// or a dense solve. `work` must hold `d²` entries.
    pub fn solve_sigma_into(
        &self,
        t: f64,
        x: &[f64],
        v: &[f64],
        out: &mut [f64],
        work: &mut [f64],
    ) -> Result<()> {
        let singular = || Error::SingularSigma {
            t,
            point: x.to_vec(),
        };
        match &self.sigma_inverse {
            Some(inv) if self.noise_scale != 0.0 => {
                inv(t, x, work);
                linalg::mat_vec(work, v, out);
                if self.noise_scale != 1.0 {
                    out.iter_mut().for_each(|o| *o /= self.noise_scale);
                }
            }
            Some(_) => return Err(singular()),
            None => {
                self.sigma_into(t, x, work);
                out.copy_from_slice(v);
                linalg::solve_in_place(work, out, self.dim).map_err(|_| singular())?;
            }
        }
        if out.iter().all(|o| o.is_finite()) {
            Ok(())
        } else {
            Err(singular())
        }
    }

    pub fn solve_sigma(&self, t: f64, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        let mut work = vec![0.0; self.dim * self.dim];
        self.solve_sigma_into(t, x, v, &mut out, &mut work)?;
        Ok(out)
    }
}

/// Named real parameters for catalog systems.
pub type SystemParams = BTreeMap<String, f64>;

/// Names accepted by [`builtin_system`].
pub const CATALOG: [&str; 3] = ["linear_additive", "sine_multiplicative", "ou_nodelay"];

fn param(params: &SystemParams, system: &str, name: &str) -> Result<f64> {
    let v = *params.get(name).ok_or_else(|| Error::MissingParameter {
        system: system.into(),
        param: name.into(),
    })?;
    if !v.is_finite() {
        return Err(Error::InvalidParameter {
            name: name.into(),
            value: v,
            reason: "must be finite".into(),
        });
    }
    Ok(v)
}

fn dimension(params: &SystemParams) -> Result<usize> {
    match params.get("d") {
        None => Ok(1),
        Some(&d) if d >= 1.0 && d.fract() == 0.0 && d <= 64.0 => Ok(d as usize),
        Some(&d) => Err(Error::InvalidParameter {
            name: "d".into(),
            value: d,
            reason: "dimension must be a positive integer".into(),
        }),
    }
}

fn check_allowed(params: &SystemParams, system: &str, allowed: &[&str]) -> Result<()> {
    match params.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(Error::InvalidParameter {
            name: k.clone(),
            value: params[k],
            reason: format!("not a parameter of `{system}` (expected {allowed:?})"),
        }),
        None => Ok(()),
    }
}

fn positive_noise(s0: f64) -> Result<()> {
    if s0 > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "s0".into(),
            value: s0,
            reason: "noise level must be positive".into(),
        })
    }
}

fn scaled_identity(s0: f64, d: usize) -> impl Fn(f64, &[f64], &mut [f64]) + Send + Sync {
    move |_, _, out| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            out[i * d + i] = s0;
        }
    }
}

/// Builds a catalog system with its analytic constants.
///
/// * `linear_additive` (`a`, `c`, `s0`, optional `d`):
///   `dX = (a X(t) + c X(t − r0)) dt + s0 dB`
/// * `sine_multiplicative` (`a`, `c`, `s0`, `d = 1`):
///   `σ(x) = s0 (2 + sin x)`, `Z(x) = a x`, `b(ξ) = c ξ(−r0)`
/// * `ou_nodelay` (`a`, `s0`, optional `d`): `dX = −a X dt + s0 dB`
pub fn builtin_system(name: &str, params: &SystemParams) -> Result<CoefficientSet> {
    match name {
        "linear_additive" => {
            check_allowed(params, name, &["a", "c", "s0", "d"])?;
            let (a, c, s0) = (
                param(params, name, "a")?,
                param(params, name, "c")?,
                param(params, name, "s0")?,
            );
            positive_noise(s0)?;
            let d = dimension(params)?;
            let consts = AssumptionConstants::new(c.abs() / s0, 0.0, 1.0 / s0, 2.0 * a)?;
            Ok(CoefficientSet::new(
                d,
                scaled_identity(s0, d),
                move |_, x, out| {
                    for (o, v) in out.iter_mut().zip(x) {
                        *o = a * v;
                    }
                },
                move |_, seg, out| {
                    for (o, v) in out.iter_mut().zip(seg.oldest()) {
                        *o = c * v;
                    }
                },
                consts,
            )?
            .with_sigma_inverse(scaled_identity(1.0 / s0, d))
            .mark_autonomous()
            .with_label(name))
        }
        "sine_multiplicative" => {
            check_allowed(params, name, &["a", "c", "s0", "d"])?;
            let (a, c, s0) = (
                param(params, name, "a")?,
                param(params, name, "c")?,
                param(params, name, "s0")?,
            );
            positive_noise(s0)?;
            if dimension(params)? != 1 {
                return Err(Error::InvalidParameter {
                    name: "d".into(),
                    value: params["d"],
                    reason: "sine_multiplicative is one-dimensional".into(),
                });
            }
            let consts =
                AssumptionConstants::new(c.abs() / s0, 2.0 * s0, 1.0 / s0, s0 * s0 + 2.0 * a)?;
            Ok(CoefficientSet::new(
                1,
                move |_, x, out| out[0] = s0 * (2.0 + x[0].sin()),
                move |_, x, out| out[0] = a * x[0],
                move |_, seg, out| out[0] = c * seg.oldest()[0],
                consts,
            )?
            .with_sigma_inverse(move |_, x, out| out[0] = 1.0 / (s0 * (2.0 + x[0].sin())))
            .mark_autonomous()
            .with_label(name))
        }
        "ou_nodelay" => {
            check_allowed(params, name, &["a", "s0", "d"])?;
            let (a, s0) = (param(params, name, "a")?, param(params, name, "s0")?);
            positive_noise(s0)?;
            let d = dimension(params)?;
            let consts = AssumptionConstants::new(0.0, 0.0, 1.0 / s0, -2.0 * a)?;
            Ok(CoefficientSet::new(
                d,
                scaled_identity(s0, d),
                move |_, x, out| {
                    for (o, v) in out.iter_mut().zip(x) {
                        *o = -a * v;
                    }
                },
                |_, _, out| out.iter_mut().for_each(|o| *o = 0.0),
                consts,
            )?
            .with_sigma_inverse(scaled_identity(1.0 / s0, d))
            .mark_delay_free()
            .mark_autonomous()
            .with_label(name))
        }
        other => Err(Error::UnknownSystem(other.into())),
    }
}

/// Region sampled by [`audit_assumptions`]: `t ∈ [0, t_max]`, points uniform
/// in `[−half_width, half_width]^d`, segments piecewise linear through
/// `knots` uniform knot values on the `(r0, m)` grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingBox {
    pub t_max: f64,
    pub half_width: f64,
    pub r0: f64,
    pub m: usize,
    pub knots: usize,
}

impl SamplingBox {
    pub fn new(t_max: f64, r0: f64, m: usize) -> Self {
        Self {
            t_max,
            half_width: 5.0,
            r0,
            m,
            knots: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionAudit {
    pub condition: &'static str,
    pub max_ratio: f64,
    pub samples: usize,
    pub declared: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub conditions: [ConditionAudit; 4],
    pub slack: f64,
    /// First sample point at which `σ` could not be inverted, if any.
    pub singular_at: Option<(f64, Vec<f64>)>,
}

impl AuditReport {
    pub const CAVEAT: &'static str =
        "sampling can falsify the declared constants but never prove them";

    pub fn all_pass(&self) -> bool {
        self.conditions.iter().all(|c| c.pass)
    }

    pub fn condition(&self, name: &str) -> Option<&ConditionAudit> {
        self.conditions.iter().find(|c| c.condition == name)
    }
}

struct SampleRatios {
    ratios: [f64; 4],
    singular: Option<(f64, Vec<f64>)>,
}

fn random_point(rng: &mut CounterRng, d: usize, w: f64) -> Vec<f64> {
    (0..d).map(|_| (2.0 * rng.uniform() - 1.0) * w).collect()
}

fn random_segment(rng: &mut CounterRng, d: usize, bx: &SamplingBox) -> SegmentPath {
    let knots = bx.knots.max(2);
    let kv: Vec<Vec<f64>> = (0..knots).map(|_| random_point(rng, d, bx.half_width)).collect();
    let mut values = Vec::with_capacity((bx.m + 1) * d);
    for i in 0..=bx.m {
        let pos = i as f64 / bx.m as f64 * (knots - 1) as f64;
        let k = (pos.floor() as usize).min(knots - 2);
        let w = pos - k as f64;
        for j in 0..d {
            values.push((1.0 - w) * kv[k][j] + w * kv[k + 1][j]);
        }
    }
    SegmentPath::from_values(bx.r0, bx.m, d, values).expect("finite by construction")
}

fn audit_sample(coeffs: &CoefficientSet, bx: &SamplingBox, seed: u64, idx: u64) -> SampleRatios {
    let d = coeffs.dim();
    let mut rng = CounterRng::new(seed, idx);
    let t = rng.uniform() * bx.t_max;
    let x = random_point(&mut rng, d, bx.half_width);
    let y = random_point(&mut rng, d, bx.half_width);
    let xi = random_segment(&mut rng, d, bx);
    let eta = random_segment(&mut rng, d, bx);
    let mut ratios = [f64::NEG_INFINITY; 4];
    let mut singular = None;

    // (A1)
    let db: Vec<f64> = coeffs
        .b(t, &xi)
        .iter()
        .zip(coeffs.b(t, &eta))
        .map(|(p, q)| p - q)
        .collect();
    let seg_gap = xi.sup_distance(&eta).expect("same grid");
    match coeffs.solve_sigma(t, eta.current(), &db) {
        Ok(v) if seg_gap > 0.0 => ratios[0] = linalg::norm(&v) / seg_gap,
        Ok(_) => {}
        Err(_) => singular = Some((t, eta.current().to_vec())),
    }

    // (A2) operator norm, (A4) Hilbert–Schmidt norm
    let sx = coeffs.sigma(t, &x);
    let sy = coeffs.sigma(t, &y);
    let diff: Vec<f64> = sx.iter().zip(&sy).map(|(p, q)| p - q).collect();
    let gap = linalg::distance(&x, &y);
    if gap > 0.0 {
        ratios[1] = linalg::operator_norm(&diff, d) / gap.min(1.0);
        let mut zx = vec![0.0; d];
        let mut zy = vec![0.0; d];
        coeffs.z_into(t, &x, &mut zx);
        coeffs.z_into(t, &y, &mut zy);
        let dz: Vec<f64> = zx.iter().zip(&zy).map(|(p, q)| p - q).collect();
        let dx: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p - q).collect();
        let hs = linalg::hs_norm(&diff);
        ratios[3] = (hs * hs + 2.0 * linalg::dot(&dx, &dz)) / (gap * gap);
    }

    // (A3): ‖σ⁻¹‖ from its columns
    let mut inv = vec![0.0; d * d];
    let mut ok = true;
    for col in 0..d {
        let mut e = vec![0.0; d];
        e[col] = 1.0;
        match coeffs.solve_sigma(t, &x, &e) {
            Ok(v) => (0..d).for_each(|r| inv[r * d + col] = v[r]),
            Err(_) => {
                ok = false;
                break;
            }
        }
    }
    if ok {
        ratios[2] = linalg::operator_norm(&inv, d);
    } else {
        ratios[2] = f64::INFINITY;
        singular.get_or_insert((t, x.clone()));
    }
    SampleRatios { ratios, singular }
}

/// Samples `n` random tuples `(t, x, y, ξ, η)` from `bx` and compares the four
/// empirical ratios with the declared constants. A condition passes iff its
/// maximum ratio is at most `K + slack · |K|`.
pub fn audit_assumptions(
    coeffs: &CoefficientSet,
    bx: &SamplingBox,
    n: usize,
    seed: u64,
    slack: f64,
) -> Result<AuditReport> {
    if n == 0 {
        return Err(Error::Domain("audit needs at least one sample".into()));
    }
    if !(bx.t_max >= 0.0 && bx.half_width > 0.0 && bx.half_width.is_finite()) {
        return Err(Error::Domain("sampling box must be bounded and non-empty".into()));
    }
    let samples: Vec<SampleRatios> = (0..n as u64)
        .into_par_iter()
        .map(|i| audit_sample(coeffs, bx, seed, i))
        .collect();
    let mut maxima = [f64::NEG_INFINITY; 4];
    let mut singular_at = None;
    for s in &samples {
        for (m, r) in maxima.iter_mut().zip(s.ratios) {
            *m = m.max(r);
        }
        if singular_at.is_none() {
            singular_at = s.singular.clone();
        }
    }
    let k = coeffs.constants();
    let declared = [k.k1, k.k2, k.k3, k.k4];
    let names = ["A1", "A2", "A3", "A4"];
    let conditions = std::array::from_fn(|i| ConditionAudit {
        condition: names[i],
        max_ratio: maxima[i],
        samples: n,
        declared: declared[i],
        pass: maxima[i] <= declared[i] + slack * declared[i].abs()
            && !(i == 2 && singular_at.is_some()),
    });
    Ok(AuditReport {
        conditions,
        slack,
        singular_at,
    })
}
