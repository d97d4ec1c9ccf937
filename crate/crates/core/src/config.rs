//! Experiment configuration.
//!
//! The format is sectioned `key = value` text:
//!
//! ```text
//! # log-Harnack run on the additive linear system
//! [problem]
//! r0 = 1
//! T = 2
//! m = 400
//! t0 = 1
//!
//! [system]
//! name = linear_additive
//! a = -1
//! c = 0.5
//! s0 = 1
//!
//! [initial]
//! xi = constant:1
//! eta = constant:0
//! ```
//!
//! Parsing never stops at the first problem: every violation is collected
//! and reported together. Unknown sections and keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::bounds::{GapPair, DEFAULT_GRID_SIZE};
use crate::coefficients::{builtin_system, AssumptionConstants, CoefficientSet, SystemParams};
use crate::coupling::DEFAULT_DELTA_MERGE;
use crate::error::{Error, Result};
use crate::estimators::{SChoice, TestFunction, Tolerances, DEFAULT_CAP};
use crate::segment::{GridSpec, SegmentPath};

/// Subcommands of the command-line tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Audit,
    Simulate,
    Couple,
    Bounds,
    Entropy,
    LogHarnack,
    PowerHarnack,
    Stationary,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Audit,
        Command::Simulate,
        Command::Couple,
        Command::Bounds,
        Command::Entropy,
        Command::LogHarnack,
        Command::PowerHarnack,
        Command::Stationary,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::Audit => "audit",
            Command::Simulate => "simulate",
            Command::Couple => "couple",
            Command::Bounds => "bounds",
            Command::Entropy => "entropy",
            Command::LogHarnack => "log-harnack",
            Command::PowerHarnack => "power-harnack",
            Command::Stationary => "stationary",
        }
    }

    pub fn parse(s: &str) -> Option<Command> {
        Command::ALL.into_iter().find(|c| c.name() == s)
    }

    fn uses_coupling(&self) -> bool {
        matches!(self, Command::Couple | Command::Entropy | Command::PowerHarnack)
    }
}

/// How an initial segment is given.
#[derive(Debug, Clone, PartialEq)]
pub enum SegmentSpec {
    /// `constant:v1,...,vd`
    Constant(Vec<f64>),
    /// `affine:a,b`, every coordinate equal to `a + b u` for `u ∈ [−r0, 0]`.
    Affine(f64, f64),
    /// `file:path` in the segment CSV format.
    File(PathBuf),
}

impl SegmentSpec {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| format!("`{s}` should look like constant:..., affine:a,b or file:path"))?;
        let numbers = || -> std::result::Result<Vec<f64>, String> {
            rest.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| format!("`{v}` is not a number")))
                .collect()
        };
        match kind.trim() {
            "constant" => Ok(SegmentSpec::Constant(numbers()?)),
            "affine" => match numbers()?.as_slice() {
                [a, b] => Ok(SegmentSpec::Affine(*a, *b)),
                _ => Err("affine needs exactly two numbers a,b".into()),
            },
            "file" => Ok(SegmentSpec::File(PathBuf::from(rest.trim()))),
            other => Err(format!("unknown segment kind `{other}`")),
        }
    }

    fn render(&self) -> String {
        match self {
            SegmentSpec::Constant(v) => format!("constant:{}", join_numbers(v)),
            SegmentSpec::Affine(a, b) => format!("affine:{a},{b}"),
            SegmentSpec::File(p) => format!("file:{}", p.display()),
        }
    }

    /// Builds the segment on the `(r0, m)` grid. Relative file paths are
    /// resolved against `base`.
    pub fn build(&self, d: usize, r0: f64, m: usize, base: &Path) -> Result<SegmentPath> {
        match self {
            SegmentSpec::Constant(v) => {
                let v = if v.len() == 1 { vec![v[0]; d] } else { v.clone() };
                if v.len() != d {
                    return Err(Error::Domain(format!(
                        "constant segment has {} values, the system has d = {d}",
                        v.len()
                    )));
                }
                SegmentPath::constant(&v, r0, m)
            }
            SegmentSpec::Affine(a, b) => {
                let (a, b) = (*a, *b);
                SegmentPath::from_function(move |u, out| out.iter_mut().for_each(|o| *o = a + b * u), d, r0, m)
            }
            SegmentSpec::File(p) => {
                let path = if p.is_absolute() { p.clone() } else { base.join(p) };
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                let seg = SegmentPath::from_csv(&text)?;
                if seg.m() != m || (seg.r0() - r0).abs() > 1e-12 * r0 || seg.dim() != d {
                    return Err(Error::GridMismatch(format!(
                        "{} has (r0, m, d) = ({}, {}, {}), expected ({r0}, {m}, {d})",
                        path.display(),
                        seg.r0(),
                        seg.m(),
                        seg.dim()
                    )));
                }
                Ok(seg)
            }
        }
    }
}

fn join_numbers(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSection {
    pub command: Option<Command>,
    pub r0: f64,
    pub t_end: f64,
    pub m: usize,
    pub t0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSection {
    pub name: Option<String>,
    pub params: SystemParams,
}

/// Optional overrides of the assumption constants of the system.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstantsSection {
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub k3: Option<f64>,
    pub k4: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialSection {
    pub xi: SegmentSpec,
    pub eta: SegmentSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSection {
    /// Defaults to 1, or to `2(1 − ε)` for power-Harnack runs.
    pub theta: Option<f64>,
    pub eps: f64,
    pub p: Option<f64>,
    pub delta_merge: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSection {
    pub n: usize,
    pub seed: u64,
    pub k_tol: f64,
    pub k_viol: f64,
    pub k_two_sided: f64,
    pub max_failure_fraction: f64,
    /// `None` means optimize `s` on the bound grid.
    pub s: Option<f64>,
    /// Extra time `t < t0` at which the entropy of `R_t` is checked.
    pub until: Option<f64>,
    /// Fractions of the admissible `λ` at which the segment-integral lemma is
    /// checked in power-Harnack runs.
    pub lemma_fractions: Vec<f64>,
    pub burn_in: f64,
    pub segments_per_chain: usize,
    pub spacing: f64,
    pub audit_samples: usize,
    pub audit_slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionSection {
    pub f: String,
    pub cap: f64,
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsSection {
    pub s_grid: usize,
    pub eps_grid: usize,
    /// Gaps used by the `bounds` command instead of the initial segments.
    pub point_gap: Option<f64>,
    pub seg_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    /// 0 prints nothing, 1 a summary and the CSV tables, 2 also the
    /// effective configuration.
    pub verbosity: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    pub system: SystemSection,
    pub constants: ConstantsSection,
    pub initial: InitialSection,
    pub coupling: CouplingSection,
    pub mc: McSection,
    pub functions: FunctionSection,
    pub bounds: BoundsSection,
    pub output: OutputSection,
    /// Directory against which relative file paths are resolved.
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: ProblemSection {
                command: None,
                r0: 1.0,
                t_end: 2.0,
                m: 100,
                t0: None,
            },
            system: SystemSection {
                name: None,
                params: SystemParams::new(),
            },
            constants: ConstantsSection::default(),
            initial: InitialSection {
                xi: SegmentSpec::Constant(vec![1.0]),
                eta: SegmentSpec::Constant(vec![0.0]),
            },
            coupling: CouplingSection {
                theta: None,
                eps: 0.1,
                p: None,
                delta_merge: DEFAULT_DELTA_MERGE,
            },
            mc: McSection {
                n: 10_000,
                seed: 0,
                k_tol: 3.0,
                k_viol: 6.0,
                k_two_sided: 4.0,
                max_failure_fraction: 1e-3,
                s: None,
                until: None,
                lemma_fractions: Vec::new(),
                burn_in: 10.0,
                segments_per_chain: 10,
                spacing: 2.0,
                audit_samples: 10_000,
                audit_slack: 1e-9,
            },
            functions: FunctionSection {
                f: "one_plus_capped_square".into(),
                cap: DEFAULT_CAP,
                constant: 1.0,
            },
            bounds: BoundsSection {
                s_grid: DEFAULT_GRID_SIZE,
                eps_grid: DEFAULT_GRID_SIZE,
                point_gap: None,
                seg_gap: None,
            },
            output: OutputSection {
                dir: None,
                verbosity: 1,
            },
            base_dir: PathBuf::from("."),
        }
    }
}

const SECTIONS: [&str; 9] = [
    "problem",
    "system",
    "constants",
    "initial",
    "coupling",
    "mc",
    "functions",
    "bounds",
    "output",
];

struct Parser {
    errors: Vec<String>,
}

impl Parser {
    fn num<T: std::str::FromStr>(&mut self, at: &str, key: &str, v: &str) -> Option<T> {
        match v.parse::<T>() {
            Ok(x) => Some(x),
            Err(_) => {
                self.errors.push(format!("{at}: `{key}` has invalid value `{v}`"));
                None
            }
        }
    }

    fn real(&mut self, at: &str, key: &str, v: &str) -> Option<f64> {
        let x: f64 = self.num(at, key, v)?;
        if x.is_finite() {
            Some(x)
        } else {
            self.errors.push(format!("{at}: `{key}` must be finite"));
            None
        }
    }
}

/// Parses and validates a configuration. Relative paths inside it are taken
/// relative to the current directory.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_with_base(text, Path::new("."))
}

pub fn parse_config_with_base(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig {
        base_dir: base.to_path_buf(),
        ..ExperimentConfig::default()
    };
    let mut p = Parser { errors: Vec::new() };
    let mut section: Option<String> = None;
    let mut seen: BTreeMap<(String, String), usize> = BTreeMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            if SECTIONS.contains(&name) {
                section = Some(name.to_string());
            } else {
                p.errors.push(format!("line {lineno}: unknown section [{name}]"));
                section = None;
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            p.errors.push(format!("line {lineno}: expected `key = value`, got `{line}`"));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        let Some(sec) = section.clone() else {
            p.errors.push(format!("line {lineno}: key `{key}` appears outside any section"));
            continue;
        };
        if let Some(prev) = seen.insert((sec.clone(), key.to_string()), lineno) {
            p.errors.push(format!(
                "line {lineno}: duplicate key `{key}` in [{sec}] (first set on line {prev})"
            ));
            continue;
        }
        let at = format!("line {lineno}");
        assign(&mut cfg, &mut p, &sec, key, value, &at);
    }

    validate(&cfg, &mut p.errors);
    if p.errors.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(p.errors))
    }
}

fn assign(cfg: &mut ExperimentConfig, p: &mut Parser, sec: &str, key: &str, v: &str, at: &str) {
    let unknown = |p: &mut Parser| {
        p.errors.push(format!("{at}: unknown key `{key}` in [{sec}]"));
    };
    match (sec, key) {
        ("problem", "command") => match Command::parse(v) {
            Some(c) => cfg.problem.command = Some(c),
            None => p.errors.push(format!("{at}: unknown command `{v}`")),
        },
        ("problem", "r0") => set(&mut cfg.problem.r0, p.real(at, key, v)),
        ("problem", "T") => set(&mut cfg.problem.t_end, p.real(at, key, v)),
        ("problem", "m") => set(&mut cfg.problem.m, p.num(at, key, v)),
        ("problem", "t0") => cfg.problem.t0 = p.real(at, key, v),
        ("problem", "d") => {
            if let Some(d) = p.num::<usize>(at, key, v) {
                cfg.system.params.insert("d".into(), d as f64);
            }
        }
        ("system", "name") => cfg.system.name = Some(v.to_string()),
        ("system", _) => {
            if let Some(x) = p.real(at, key, v) {
                cfg.system.params.insert(key.to_string(), x);
            }
        }
        ("constants", "K1" | "k1") => cfg.constants.k1 = p.real(at, key, v),
        ("constants", "K2" | "k2") => cfg.constants.k2 = p.real(at, key, v),
        ("constants", "K3" | "k3") => cfg.constants.k3 = p.real(at, key, v),
        ("constants", "K4" | "k4") => cfg.constants.k4 = p.real(at, key, v),
        ("initial", "xi" | "eta") => match SegmentSpec::parse(v) {
            Ok(spec) if key == "xi" => cfg.initial.xi = spec,
            Ok(spec) => cfg.initial.eta = spec,
            Err(e) => p.errors.push(format!("{at}: {key}: {e}")),
        },
        ("coupling", "theta") => cfg.coupling.theta = p.real(at, key, v),
        ("coupling", "eps") => set(&mut cfg.coupling.eps, p.real(at, key, v)),
        ("coupling", "p") => cfg.coupling.p = p.real(at, key, v),
        ("coupling", "delta_merge") => set(&mut cfg.coupling.delta_merge, p.real(at, key, v)),
        ("mc", "n") => set(&mut cfg.mc.n, p.num(at, key, v)),
        ("mc", "seed") => set(&mut cfg.mc.seed, p.num(at, key, v)),
        ("mc", "k_tol") => set(&mut cfg.mc.k_tol, p.real(at, key, v)),
        ("mc", "k_viol") => set(&mut cfg.mc.k_viol, p.real(at, key, v)),
        ("mc", "k_two_sided") => set(&mut cfg.mc.k_two_sided, p.real(at, key, v)),
        ("mc", "max_failure_fraction") => {
            set(&mut cfg.mc.max_failure_fraction, p.real(at, key, v))
        }
        ("mc", "s") => {
            cfg.mc.s = if v == "optimize" {
                None
            } else {
                p.real(at, key, v)
            }
        }
        ("mc", "until") => cfg.mc.until = p.real(at, key, v),
        ("mc", "lemma_fractions") => {
            let parsed: Option<Vec<f64>> = v
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| p.real(at, key, s.trim()))
                .collect();
            if let Some(list) = parsed {
                cfg.mc.lemma_fractions = list;
            }
        }
        ("mc", "burn_in") => set(&mut cfg.mc.burn_in, p.real(at, key, v)),
        ("mc", "segments_per_chain") => set(&mut cfg.mc.segments_per_chain, p.num(at, key, v)),
        ("mc", "spacing") => set(&mut cfg.mc.spacing, p.real(at, key, v)),
        ("mc", "audit_samples") => set(&mut cfg.mc.audit_samples, p.num(at, key, v)),
        ("mc", "audit_slack") => set(&mut cfg.mc.audit_slack, p.real(at, key, v)),
        ("functions", "f") => cfg.functions.f = v.to_string(),
        ("functions", "cap") => set(&mut cfg.functions.cap, p.real(at, key, v)),
        ("functions", "constant") => set(&mut cfg.functions.constant, p.real(at, key, v)),
        ("bounds", "s_grid") => set(&mut cfg.bounds.s_grid, p.num(at, key, v)),
        ("bounds", "eps_grid") => set(&mut cfg.bounds.eps_grid, p.num(at, key, v)),
        ("bounds", "point_gap") => cfg.bounds.point_gap = p.real(at, key, v),
        ("bounds", "seg_gap") => cfg.bounds.seg_gap = p.real(at, key, v),
        ("output", "dir") => cfg.output.dir = Some(PathBuf::from(v)),
        ("output", "verbosity") => set(&mut cfg.output.verbosity, p.num(at, key, v)),
        _ => unknown(p),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn validate(cfg: &ExperimentConfig, errors: &mut Vec<String>) {
    let pr = &cfg.problem;
    if !(pr.r0 > 0.0) {
        errors.push(format!("[problem] r0 = {} must be positive", pr.r0));
    }
    if pr.m == 0 {
        errors.push("[problem] m must be at least 1".into());
    }
    let grid = GridSpec::new(pr.r0, pr.t_end, pr.m.max(1));
    if let Err(e) = &grid {
        errors.push(format!("[problem] {e}"));
    }
    if let (Some(t0), Ok(g)) = (pr.t0, &grid) {
        if let Err(e) = g.with_t0(t0) {
            errors.push(format!("[problem] {e}"));
        } else if t0 > pr.t_end - pr.r0 + 1e-12 * pr.t_end {
            errors.push(format!(
                "[problem] t0 = {t0} must not exceed T - r0 = {}",
                pr.t_end - pr.r0
            ));
        }
    }
    if let Some(cmd) = pr.command {
        for e in command_errors(cfg, cmd) {
            errors.push(e);
        }
    }
    if let Some(name) = &cfg.system.name {
        if let Err(e) = builtin_system(name, &cfg.system.params) {
            errors.push(format!("[system] {e}"));
        }
    }
    if let Err(e) = TestFunction::by_name(&cfg.functions.f, cfg.functions.cap, cfg.functions.constant) {
        errors.push(format!("[functions] {e}"));
    }
    let c = &cfg.coupling;
    if let Some(th) = c.theta {
        if !(th > 0.0 && th < 2.0) {
            errors.push(format!("[coupling] theta = {th} must lie in (0, 2)"));
        }
    }
    if !(c.eps > 0.0 && c.eps < 1.0) {
        errors.push(format!("[coupling] eps = {} must lie in (0, 1)", c.eps));
    }
    if !(c.delta_merge >= 0.0) {
        errors.push("[coupling] delta_merge must be nonnegative".into());
    }
    if cfg.mc.n < 2 {
        errors.push("[mc] n must be at least 2".into());
    }
    if cfg.bounds.s_grid < 3 || cfg.bounds.eps_grid < 3 {
        errors.push("[bounds] grid sizes must be at least 3".into());
    }
}

/// Checks that apply only to a particular command.
pub fn command_errors(cfg: &ExperimentConfig, cmd: Command) -> Vec<String> {
    let mut errors = Vec::new();
    let pr = &cfg.problem;
    if matches!(cmd, Command::LogHarnack | Command::PowerHarnack) && !(pr.t_end > pr.r0) {
        errors.push(format!(
            "[problem] {} needs T > r0 (the log-Harnack inequality fails for T <= r0); got T = {}, r0 = {}",
            cmd.name(),
            pr.t_end,
            pr.r0
        ));
    }
    if cmd.uses_coupling() && pr.t0.is_none() {
        errors.push(format!("[problem] {} needs a coupling time t0", cmd.name()));
    }
    if cmd != Command::Bounds && cmd != Command::Stationary && cfg.system.name.is_none() {
        errors.push(format!("[system] {} needs a system name", cmd.name()));
    }
    if cmd == Command::Stationary && cfg.system.name.is_none() {
        errors.push("[system] stationary needs a system name".into());
    }
    if cmd == Command::PowerHarnack && cfg.coupling.p.is_none() {
        errors.push("[coupling] power-harnack needs p".into());
    }
    errors
}

impl ExperimentConfig {
    /// Checks command-specific requirements.
    pub fn validate_for(&self, cmd: Command) -> Result<()> {
        let errors = command_errors(self, cmd);
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let g = GridSpec::new(self.problem.r0, self.problem.t_end, self.problem.m)?;
        match self.problem.t0 {
            Some(t0) => g.with_t0(t0),
            None => Ok(g),
        }
    }

    /// The configured system with any constant overrides applied.
    pub fn coefficients(&self) -> Result<CoefficientSet> {
        let name = self
            .system
            .name
            .as_deref()
            .ok_or_else(|| Error::Config(vec!["[system] name is required".into()]))?;
        let base = builtin_system(name, &self.system.params)?;
        let merged = self.merge_constants(Some(base.constants()))?;
        base.with_constants(merged)
    }

    /// Constants from the system, overridden by `[constants]`. Without a
    /// system every constant must be given.
    pub fn assumption_constants(&self) -> Result<AssumptionConstants> {
        match &self.system.name {
            Some(_) => Ok(self.coefficients()?.constants()),
            None => self.merge_constants(None),
        }
    }

    fn merge_constants(&self, base: Option<AssumptionConstants>) -> Result<AssumptionConstants> {
        let c = &self.constants;
        let pick = |o: Option<f64>, b: Option<f64>, name: &str| {
            o.or(b).ok_or_else(|| {
                Error::Config(vec![format!("[constants] {name} is required when no system is given")])
            })
        };
        AssumptionConstants::new(
            pick(c.k1, base.map(|b| b.k1), "K1")?,
            pick(c.k2, base.map(|b| b.k2), "K2")?,
            pick(c.k3, base.map(|b| b.k3), "K3")?,
            pick(c.k4, base.map(|b| b.k4), "K4")?,
        )
    }

    pub fn dim(&self) -> usize {
        self.system.params.get("d").map_or(1, |d| *d as usize)
    }

    pub fn initial_segments(&self) -> Result<(SegmentPath, SegmentPath)> {
        let (d, r0, m) = (self.dim(), self.problem.r0, self.problem.m);
        Ok((
            self.initial.xi.build(d, r0, m, &self.base_dir)?,
            self.initial.eta.build(d, r0, m, &self.base_dir)?,
        ))
    }

    /// Gaps for the `bounds` command: explicit values win over segments.
    pub fn gaps(&self) -> Result<GapPair> {
        match (self.bounds.point_gap, self.bounds.seg_gap) {
            (Some(pg), Some(sg)) => GapPair::new(pg, sg),
            (None, None) => {
                let (xi, eta) = self.initial_segments()?;
                GapPair::from_segments(&xi, &eta)
            }
            _ => Err(Error::Config(vec![
                "[bounds] point_gap and seg_gap must be given together".into(),
            ])),
        }
    }

    pub fn test_function(&self) -> Result<TestFunction> {
        TestFunction::by_name(&self.functions.f, self.functions.cap, self.functions.constant)
    }

    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            k_tol: self.mc.k_tol,
            k_viol: self.mc.k_viol,
            max_failure_fraction: self.mc.max_failure_fraction,
        }
    }

    pub fn s_choice(&self) -> SChoice {
        match self.mc.s {
            Some(s) => SChoice::Fixed(s),
            None => SChoice::Optimize(self.bounds.s_grid),
        }
    }

    /// Renders the configuration in the format accepted by [`parse_config`].
    pub fn render(&self) -> String {
        let mut o = String::new();
        let pr = &self.problem;
        o.push_str("[problem]\n");
        if let Some(c) = pr.command {
            let _ = writeln!(o, "command = {}", c.name());
        }
        let _ = writeln!(o, "r0 = {}\nT = {}\nm = {}", pr.r0, pr.t_end, pr.m);
        if let Some(t0) = pr.t0 {
            let _ = writeln!(o, "t0 = {t0}");
        }

        o.push_str("\n[system]\n");
        if let Some(n) = &self.system.name {
            let _ = writeln!(o, "name = {n}");
        }
        for (k, v) in &self.system.params {
            let _ = writeln!(o, "{k} = {v}");
        }

        o.push_str("\n[constants]\n");
        for (k, v) in [
            ("K1", self.constants.k1),
            ("K2", self.constants.k2),
            ("K3", self.constants.k3),
            ("K4", self.constants.k4),
        ] {
            if let Some(v) = v {
                let _ = writeln!(o, "{k} = {v}");
            }
        }

        let _ = writeln!(
            o,
            "\n[initial]\nxi = {}\neta = {}",
            self.initial.xi.render(),
            self.initial.eta.render()
        );

        let c = &self.coupling;
        o.push_str("\n[coupling]\n");
        if let Some(th) = c.theta {
            let _ = writeln!(o, "theta = {th}");
        }
        let _ = writeln!(o, "eps = {}", c.eps);
        if let Some(p) = c.p {
            let _ = writeln!(o, "p = {p}");
        }
        let _ = writeln!(o, "delta_merge = {}", c.delta_merge);

        let mc = &self.mc;
        let _ = writeln!(
            o,
            "\n[mc]\nn = {}\nseed = {}\nk_tol = {}\nk_viol = {}\nk_two_sided = {}\nmax_failure_fraction = {}",
            mc.n, mc.seed, mc.k_tol, mc.k_viol, mc.k_two_sided, mc.max_failure_fraction
        );
        match mc.s {
            Some(s) => {
                let _ = writeln!(o, "s = {s}");
            }
            None => o.push_str("s = optimize\n"),
        }
        if let Some(u) = mc.until {
            let _ = writeln!(o, "until = {u}");
        }
        if !mc.lemma_fractions.is_empty() {
            let _ = writeln!(o, "lemma_fractions = {}", join_numbers(&mc.lemma_fractions));
        }
        let _ = writeln!(
            o,
            "burn_in = {}\nsegments_per_chain = {}\nspacing = {}\naudit_samples = {}\naudit_slack = {}",
            mc.burn_in, mc.segments_per_chain, mc.spacing, mc.audit_samples, mc.audit_slack
        );

        let f = &self.functions;
        let _ = writeln!(o, "\n[functions]\nf = {}\ncap = {}\nconstant = {}", f.f, f.cap, f.constant);

        let b = &self.bounds;
        let _ = writeln!(o, "\n[bounds]\ns_grid = {}\neps_grid = {}", b.s_grid, b.eps_grid);
        if let Some(v) = b.point_gap {
            let _ = writeln!(o, "point_gap = {v}");
        }
        if let Some(v) = b.seg_gap {
            let _ = writeln!(o, "seg_gap = {v}");
        }

        o.push_str("\n[output]\n");
        if let Some(d) = &self.output.dir {
            let _ = writeln!(o, "dir = {}", d.display());
        }
        let _ = writeln!(o, "verbosity = {}", self.output.verbosity);
        o
    }
}
