//! Command-line front end.
//!
//! Every subcommand reads one configuration file, runs the matching pipeline
//! inside a dedicated thread pool and writes its CSV tables to the output
//! directory. The exit status is 0 when every checked claim holds (or nothing
//! was checked), 2 when a claim is violated, 3 when a check is inconclusive
//! and 1 on any error.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::bounds::{self, BoundReport};
use crate::coefficients::{audit_assumptions, SamplingBox};
use crate::config::{parse_config_with_base, Command, ExperimentConfig};
use crate::coupling::{simulate_coupled_q, Coupling, GammaSchedule};
use crate::error::{Error, Result};
use crate::estimators::{
    self, reports_to_csv, version_string, MCEstimate, PhiGrids, StationaryOptions, Verdict,
    VerdictReport,
};
use crate::integrator::simulate_path;
use crate::rng::derive_seed;

pub const THREADS_ENV: &str = "HARNACK_LAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "harnack-lab", version, about = "Coupling, Harnack bounds and Monte Carlo checks for delay SDEs")]
struct Cli {
    /// Experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding `[mc] seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of Monte Carlo paths, overriding `[mc] n`.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Output directory, overriding `[output] dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print nothing on success.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Sub {
    /// Sample the structural conditions and compare with the declared constants.
    Audit,
    /// Simulate one path and estimate P_T f.
    Simulate,
    /// Simulate a coupled pair and check the Girsanov weight.
    Couple,
    /// Evaluate the closed-form bounds.
    Bounds,
    /// Estimate the entropy of the coupling weight against its bound.
    Entropy,
    /// Check the log-Harnack inequality.
    LogHarnack,
    /// Check the power Harnack inequality.
    PowerHarnack,
    /// Sample segments from the stationary law.
    Stationary,
}

impl Sub {
    fn command(self) -> Command {
        match self {
            Sub::Audit => Command::Audit,
            Sub::Simulate => Command::Simulate,
            Sub::Couple => Command::Couple,
            Sub::Bounds => Command::Bounds,
            Sub::Entropy => Command::Entropy,
            Sub::LogHarnack => Command::LogHarnack,
            Sub::PowerHarnack => Command::PowerHarnack,
            Sub::Stationary => Command::Stationary,
        }
    }
}

/// Everything a subcommand produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub summary: String,
    /// File name and contents.
    pub files: Vec<(String, String)>,
    pub verdicts: Vec<Verdict>,
}

impl Outcome {
    /// 0, 2 or 3. A violation outranks an inconclusive check.
    pub fn exit_code(&self) -> i32 {
        if self.verdicts.contains(&Verdict::Violated) {
            Verdict::Violated.exit_code()
        } else if self.verdicts.contains(&Verdict::Inconclusive) {
            Verdict::Inconclusive.exit_code()
        } else {
            0
        }
    }

    fn add_reports(&mut self, file: &str, reports: &[VerdictReport]) {
        for r in reports {
            let _ = writeln!(
                self.summary,
                "{}: lhs = {:.6} ± {:.2e}, rhs = {:.6} ± {:.2e}, margin = {:.2} SE -> {}",
                r.claim,
                r.lhs.mean,
                r.lhs.std_error,
                r.rhs.mean,
                r.rhs.std_error,
                r.margin_se,
                r.verdict.as_str()
            );
            self.verdicts.push(r.verdict);
        }
        self.files.push((file.into(), reports_to_csv(reports)));
    }
}

/// Runs the tool with `argv` (including the program name) and returns the
/// process exit status.
pub fn run_command(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(k) = flag {
        return Ok(Some(k));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse::<usize>().map(Some).map_err(|_| {
            Error::Config(vec![format!("{THREADS_ENV} = `{v}` is not a thread count")])
        }),
        Err(_) => Ok(None),
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config(vec!["--config <path> is required".into()]))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut cfg = parse_config_with_base(&text, base)?;
    if let Some(s) = cli.seed {
        cfg.mc.seed = s;
    }
    if let Some(n) = cli.paths {
        if n < 2 {
            return Err(Error::Config(vec!["--paths must be at least 2".into()]));
        }
        cfg.mc.n = n;
    }
    if let Some(dir) = &cli.out {
        cfg.output.dir = Some(dir.clone());
    }
    if cli.quiet {
        cfg.output.verbosity = 0;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<i32> {
    let cmd = cli.command.command();
    let cfg = load(cli)?;
    if let Some(declared) = cfg.problem.command {
        if declared != cmd {
            return Err(Error::Config(vec![format!(
                "config is for `{}` but `{}` was requested",
                declared.name(),
                cmd.name()
            )]));
        }
    }
    cfg.validate_for(cmd)?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = thread_count(cli.threads)? {
        builder = builder.num_threads(k);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Domain(format!("cannot start thread pool: {e}")))?;
    let outcome = pool.install(|| execute(cmd, &cfg))?;

    let dir = cfg.output.dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    for (name, contents) in &outcome.files {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    }

    // A closed stdout (for example a pipe into `head`) must not turn a
    // finished run into an error.
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    if cfg.output.verbosity >= 2 {
        let _ = writeln!(w, "# effective configuration\n{}", cfg.render());
    }
    if cfg.output.verbosity >= 1 {
        let _ = write!(w, "{}", outcome.summary);
        for (name, contents) in &outcome.files {
            if name.starts_with("trajectory") || name.starts_with("coupled") {
                let _ = writeln!(w, "wrote {}", dir.join(name).display());
            } else {
                let _ = writeln!(w, "\n# {}\n{}", dir.join(name).display(), contents.trim_end());
            }
        }
    }
    Ok(outcome.exit_code())
}

/// Runs `cmd` on the current rayon pool without touching the file system
/// except to read initial segments.
pub fn execute(cmd: Command, cfg: &ExperimentConfig) -> Result<Outcome> {
    match cmd {
        Command::Audit => audit(cfg),
        Command::Simulate => simulate(cfg),
        Command::Couple => couple(cfg),
        Command::Bounds => bounds_cmd(cfg),
        Command::Entropy => entropy(cfg),
        Command::LogHarnack => log_harnack(cfg),
        Command::PowerHarnack => power_harnack(cfg),
        Command::Stationary => stationary(cfg),
    }
}

const QUANTITY_HEADER: &str = "quantity,value,std_error,n,seed,h,version";

fn quantity_row(out: &mut String, name: &str, est: &MCEstimate, h: f64) {
    let _ = writeln!(
        out,
        "{name},{},{},{},{},{h},{}",
        est.mean,
        est.std_error,
        est.n,
        est.seed,
        version_string()
    );
}

fn coupling_for(cfg: &ExperimentConfig, theta: f64) -> Result<Coupling> {
    let coeffs = cfg.coefficients()?;
    let t0 = cfg
        .problem
        .t0
        .ok_or_else(|| Error::Config(vec!["[problem] t0 is required".into()]))?;
    let sched = GammaSchedule::new(theta, coeffs.constants().k4, t0)?;
    Coupling::new(sched).with_delta_merge(cfg.coupling.delta_merge)
}

fn audit(cfg: &ExperimentConfig) -> Result<Outcome> {
    let coeffs = cfg.coefficients()?;
    let pr = &cfg.problem;
    let (n, seed, h) = (cfg.mc.audit_samples, cfg.mc.seed, pr.r0 / pr.m as f64);
    let report = audit_assumptions(
        &coeffs,
        &SamplingBox::new(pr.t_end, pr.r0, pr.m),
        n,
        seed,
        cfg.mc.audit_slack,
    )?;
    let mut csv = String::from("condition,max_ratio,declared,samples,pass,n,seed,h,version\n");
    let mut summary = String::new();
    for c in &report.conditions {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{n},{seed},{h},{}",
            c.condition,
            c.max_ratio,
            c.declared,
            c.samples,
            c.pass,
            version_string()
        );
        let _ = writeln!(
            summary,
            "{}: sampled max {:.6} vs declared {:.6} -> {}",
            c.condition,
            c.max_ratio,
            c.declared,
            if c.pass { "consistent" } else { "falsified" }
        );
    }
    if let Some((t, x)) = &report.singular_at {
        let _ = writeln!(summary, "sigma is singular at t = {t}, x = {x:?}");
    }
    let _ = writeln!(summary, "note: {}", crate::coefficients::AuditReport::CAVEAT);
    Ok(Outcome {
        summary,
        files: vec![("audit.csv".into(), csv)],
        verdicts: vec![if report.all_pass() {
            Verdict::Holds
        } else {
            Verdict::Violated
        }],
    })
}

fn simulate(cfg: &ExperimentConfig) -> Result<Outcome> {
    let coeffs = cfg.coefficients()?;
    let grid = cfg.grid()?;
    let (xi, _) = cfg.initial_segments()?;
    let f = cfg.test_function()?;
    let (n, seed) = (cfg.mc.n, cfg.mc.seed);
    let path = simulate_path(&coeffs, &xi, &grid, seed, 0)?;
    let pt_f = estimators::estimate_pt_f(&coeffs, &xi, &f, &grid, n, derive_seed(seed, 1))?;
    let mut csv = format!("{QUANTITY_HEADER}\n");
    quantity_row(&mut csv, &format!("pt_{}", f.name()), &pt_f, grid.h());
    let summary = format!(
        "P_T f(xi) for f = {}: {:.6} ± {:.2e} over {n} paths\n",
        f.name(),
        pt_f.mean,
        pt_f.std_error
    );
    Ok(Outcome {
        summary,
        files: vec![
            ("trajectory.csv".into(), path.to_csv()),
            ("simulate.csv".into(), csv),
        ],
        verdicts: Vec::new(),
    })
}

fn couple(cfg: &ExperimentConfig) -> Result<Outcome> {
    let coeffs = cfg.coefficients()?;
    let grid = cfg.grid()?;
    let (xi, eta) = cfg.initial_segments()?;
    let coupling = coupling_for(cfg, cfg.coupling.theta.unwrap_or(1.0))?;
    let (n, seed) = (cfg.mc.n, cfg.mc.seed);
    let tol = cfg.tolerances();

    let path = simulate_coupled_q(&coeffs, &xi, &eta, &coupling, &grid, seed, 0)?;
    let martingale = estimators::check_martingale(
        &coeffs,
        &xi,
        &eta,
        &coupling,
        &grid,
        n,
        seed,
        cfg.mc.k_two_sided,
        &tol,
    )?;
    let merged = estimators::merged_fraction(
        &coeffs,
        &xi,
        &eta,
        &coupling,
        &grid,
        n,
        derive_seed(seed, 3),
    )?;

    let mut out = Outcome::default();
    let _ = writeln!(
        out.summary,
        "path 0: {} at t = {}",
        if path.merged { "merged" } else { "not merged" },
        path.tau().map_or("-".to_string(), |t| t.to_string())
    );
    let _ = writeln!(out.summary, "merged fraction: {merged} over {n} paths");
    out.files.push(("coupled.csv".into(), path.to_csv()));
    out.add_reports("couple.csv", &[martingale]);
    let mut q = format!("{QUANTITY_HEADER}\n");
    let merged_est = MCEstimate {
        mean: merged,
        std_error: (merged * (1.0 - merged) / n as f64).sqrt(),
        n,
        seed: derive_seed(seed, 3),
        min: 0.0,
        max: 1.0,
        failures: ((1.0 - merged) * n as f64).round() as usize,
    };
    quantity_row(&mut q, "merged_fraction", &merged_est, grid.h());
    out.files.push(("couple_quantities.csv".into(), q));
    Ok(out)
}

fn bound_rows(out: &mut String, report: &BoundReport, cfg: &ExperimentConfig) {
    let h = cfg.problem.r0 / cfg.problem.m as f64;
    for line in report.to_csv().lines().skip(1) {
        let _ = writeln!(
            out,
            "{},{line},{},{},{h},{}",
            report.name,
            cfg.mc.n,
            cfg.mc.seed,
            version_string()
        );
    }
}

fn bounds_cmd(cfg: &ExperimentConfig) -> Result<Outcome> {
    let consts = cfg.assumption_constants()?;
    let gaps = cfg.gaps()?;
    let pr = &cfg.problem;
    let b = &cfg.bounds;
    let mut csv = String::from("bound,field,value,n,seed,h,version\n");
    let mut summary = String::new();

    let h_t = bounds::bound_h_t(&consts, gaps, pr.t_end, pr.r0, b.s_grid)?;
    summary.push_str(&h_t.summary());
    bound_rows(&mut csv, &h_t, cfg);

    if let Some(p) = cfg.coupling.p {
        let phi = bounds::bound_phi_p(p, pr.t_end, &consts, gaps, pr.r0, b.eps_grid, b.s_grid)?;
        summary.push_str(&phi.summary());
        bound_rows(&mut csv, &phi, cfg);
    }

    if let Some(t0) = pr.t0 {
        let theta = cfg.coupling.theta.unwrap_or(1.0);
        let h = pr.r0 / pr.m as f64;
        let tail = [
            (
                "entropy_terminal",
                bounds::bound_entropy_terminal(&consts, t0, pr.r0, gaps)?,
            ),
            (
                "entropy_at_t0",
                bounds::bound_entropy_prop21(&consts, theta, t0, t0, gaps)?,
            ),
            (
                "lemma_lambda_cap",
                bounds::lemma_segment_integral_cap(&consts, t0),
            ),
        ];
        for (name, v) in tail {
            let _ = writeln!(summary, "{name} = {v:.10}");
            let _ = writeln!(
                csv,
                "{name},value,{v},{},{},{h},{}",
                cfg.mc.n,
                cfg.mc.seed,
                version_string()
            );
        }
    }
    Ok(Outcome {
        summary,
        files: vec![("bounds.csv".into(), csv)],
        verdicts: Vec::new(),
    })
}

fn entropy(cfg: &ExperimentConfig) -> Result<Outcome> {
    let coeffs = cfg.coefficients()?;
    let grid = cfg.grid()?;
    let (xi, eta) = cfg.initial_segments()?;
    let coupling = coupling_for(cfg, cfg.coupling.theta.unwrap_or(1.0))?;
    let (n, seed) = (cfg.mc.n, cfg.mc.seed);
    let tol = cfg.tolerances();
    let mut reports = vec![estimators::check_entropy(
        &coeffs, &xi, &eta, &coupling, &grid, n, seed, &tol,
    )?];
    if let Some(t) = cfg.mc.until {
        reports.push(estimators::check_entropy_until(
            &coeffs,
            &xi,
            &eta,
            &coupling,
            &grid,
            t,
            n,
            derive_seed(seed, 4),
            &tol,
        )?);
    }
    let mut out = Outcome::default();
    out.add_reports("entropy.csv", &reports);
    Ok(out)
}

fn log_harnack(cfg: &ExperimentConfig) -> Result<Outcome> {
    let coeffs = cfg.coefficients()?;
    let grid = cfg.grid()?;
    let (xi, eta) = cfg.initial_segments()?;
    let f = cfg.test_function()?;
    let report = estimators::check_log_harnack(
        &coeffs,
        &xi,
        &eta,
        &f,
        &grid,
        cfg.mc.n,
        cfg.mc.seed,
        cfg.s_choice(),
        &cfg.tolerances(),
    )?;
    let mut out = Outcome::default();
    let _ = writeln!(out.summary, "H_T = {:.10}", report.bound);
    out.add_reports("log_harnack.csv", &[report]);
    Ok(out)
}

fn power_harnack(cfg: &ExperimentConfig) -> Result<Outcome> {
    let coeffs = cfg.coefficients()?;
    let consts = coeffs.constants();
    let grid = cfg.grid()?;
    let (xi, eta) = cfg.initial_segments()?;
    let f = cfg.test_function()?;
    let p = cfg
        .coupling
        .p
        .ok_or_else(|| Error::Config(vec!["[coupling] p is required".into()]))?;
    let (n, seed) = (cfg.mc.n, cfg.mc.seed);
    let tol = cfg.tolerances();
    let grids = PhiGrids {
        eps: cfg.bounds.eps_grid,
        s: cfg.bounds.s_grid,
    };
    let mut reports = vec![estimators::check_power_harnack(
        &coeffs, &xi, &eta, &f, p, &grid, n, seed, grids, &tol,
    )?];

    if !cfg.mc.lemma_fractions.is_empty() {
        let theta = cfg
            .coupling
            .theta
            .unwrap_or(2.0 * (1.0 - cfg.coupling.eps));
        let coupling = coupling_for(cfg, theta)?;
        let s = coupling.schedule.t0();
        let cap = bounds::lemma_segment_integral_cap(&consts, s);
        if !(cap > 0.0 && cap.is_finite()) {
            return Err(Error::LemmaConstraint(format!(
                "no finite positive lambda is admissible at s = {s} (cap = {cap})"
            )));
        }
        for (i, frac) in cfg.mc.lemma_fractions.iter().enumerate() {
            reports.push(estimators::check_segment_integral_lemma(
                &coeffs,
                &xi,
                &eta,
                &coupling,
                &grid,
                s,
                frac * cap,
                n,
                derive_seed(seed, 10 + i as u64),
                &tol,
            )?);
        }
    }
    let mut out = Outcome::default();
    let _ = writeln!(
        out.summary,
        "p = {p}, threshold (1 + K2 K3)^2 = {}",
        bounds::power_threshold(&consts)
    );
    out.add_reports("power_harnack.csv", &reports);
    Ok(out)
}

fn stationary(cfg: &ExperimentConfig) -> Result<Outcome> {
    let coeffs = cfg.coefficients()?;
    let pr = &cfg.problem;
    let options = StationaryOptions {
        segments_per_chain: cfg.mc.segments_per_chain,
        spacing: cfg.mc.spacing,
        ..StationaryOptions::default()
    };
    let sample = estimators::sample_stationary_segments(
        &coeffs,
        pr.r0,
        pr.m,
        cfg.mc.n,
        cfg.mc.burn_in,
        cfg.mc.seed,
        options,
    )?;
    let summary = format!(
        "{} segments: endpoint mean {:.6}, variance {:.6}, lag-r0 covariance {:.6}\n",
        sample.segments.len(),
        sample.endpoint_mean,
        sample.endpoint_variance,
        sample.lag_covariance
    );
    Ok(Outcome {
        summary,
        files: vec![(
            "stationary.csv".into(),
            sample.to_csv(cfg.mc.seed, pr.r0 / pr.m as f64),
        )],
        verdicts: Vec::new(),
    })
}
