//! Command line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use predrec_core::copula::{self, InitialDensity, YGridSpec};
use predrec_core::kernel::{self, KernelFamily};
use predrec_core::npmle::{self, NpmleOptions};
use predrec_core::robust::{self, RegressionOptions};
use predrec_core::semiparam::{self, PrmlOptions, ThetaBox};
use predrec_core::sim::{self, EstimatorSpec, SimScenario, Truth};
use predrec_core::twogroups::{self, TwoGroupsOptions};
use predrec_core::{GridSpec, Kernel, MixingDensity, MixingGrid, Observation, WeightSchedule};
use serde_json::{json, Value};

use crate::artifact::{self, FitArtifact, GridRecord, KernelRecord, RunConfig, RunHeader, Table};
use crate::error::{CliError, Result};
use crate::harness;
use crate::ingest::{self, ColumnSpec, Dataset};

#[derive(Debug, Parser)]
#[command(
    name = "predrec",
    version,
    about = "Nonparametric mixture estimation by predictive recursion"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a mixing density with a fixed kernel.
    Fit(FitArgs),
    /// Estimate kernel parameters by maximizing the PR marginal likelihood.
    Prml(PrmlArgs),
    /// Two-groups local false discovery rates for z-scores.
    Fdr(FdrArgs),
    /// Linear regression with scale-mixture-of-normals errors.
    Regress(RegressArgs),
    /// Nonparametric maximum likelihood by fixed-point iteration.
    Npmle(NpmleArgs),
    /// Gaussian-copula predictive density of the observations.
    Predict(PredictArgs),
    /// Draw data from a registered scenario or trace PR convergence on it.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Input CSV file with a header row.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// JSON summary path; CSV tables are written next to it.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Weight schedule offset in w_i = (c + i)^-gamma.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Weight schedule exponent, in (1/2, 1].
    #[arg(long, default_value_t = 0.67)]
    pub gamma: f64,
    /// Data orderings to average over.
    #[arg(long)]
    pub perms: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for permutations and replicates.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// poisson, gauss, binomial, scale or twogroups.
    #[arg(long, default_value = "gauss")]
    pub kernel: String,
    /// Kernel parameters, comma separated (gauss: sigma; twogroups: mu,tau,sigma).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta: Option<Vec<f64>>,
    /// Mixing grid `lo:hi:m[:rule][+atom@x,..]`, or `auto`.
    #[arg(long, default_value = "auto")]
    pub grid: String,
}

#[derive(Debug, Clone, Args)]
pub struct ColumnArgs {
    /// Response column (default: first column).
    #[arg(long)]
    pub column: Option<String>,
    /// Binomial trial-count column.
    #[arg(long)]
    pub trials: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub columns: ColumnArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PrmlArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub columns: ColumnArgs,
    /// Search box, one `lo:hi` (or fixed value) per parameter, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub bounds: Option<String>,
    #[arg(long, default_value_t = 200)]
    pub max_evals: usize,
    #[arg(long, default_value_t = 20)]
    pub scan_points: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
}

#[derive(Debug, Clone, Args)]
pub struct FdrArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub columns: ColumnArgs,
    /// Grid on δ0 + λ[-1, 1]; `auto` uses 100 midpoint nodes plus the atom at 0.
    #[arg(long, default_value = "auto")]
    pub grid: String,
    /// Search box for mu,tau,sigma.
    #[arg(long, allow_hyphen_values = true)]
    pub bounds: Option<String>,
    /// Reject when the local fdr is at most this value.
    #[arg(long, default_value_t = 0.1)]
    pub cutoff: f64,
    /// Initial mass on the null atom.
    #[arg(long, default_value_t = 0.9)]
    pub null_mass: f64,
    #[arg(long, default_value_t = 0.999)]
    pub pi_cap: f64,
    #[arg(long, default_value_t = 200)]
    pub max_evals: usize,
}

#[derive(Debug, Clone, Args)]
pub struct RegressArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Response column.
    #[arg(long)]
    pub column: Option<String>,
    /// Predictor columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub x: Vec<String>,
    /// Polynomial degree applied to every predictor.
    #[arg(long, default_value_t = 1)]
    pub poly: usize,
    /// Model formula such as `y ~ a + poly(b, 2)`; overrides --column, --x and --poly.
    #[arg(long)]
    pub formula: Option<String>,
    /// Scale grid `lo:hi:m` as multiples of the robust residual scale, or `auto`.
    #[arg(long, default_value = "auto")]
    pub grid: String,
    /// Read --grid as absolute scales.
    #[arg(long)]
    pub absolute_scale: bool,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
}

#[derive(Debug, Clone, Args)]
pub struct NpmleArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub columns: ColumnArgs,
    /// Stop when the sup-norm change of the mixing weights is below this.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub column: Option<String>,
    /// Copula correlation in [0, 1).
    #[arg(long, default_value_t = copula::DEFAULT_RHO)]
    pub rho: f64,
    /// Evaluation grid `lo:hi:m`, or `auto`.
    #[arg(long, default_value = "auto")]
    pub ygrid: String,
    /// Initial density: `auto` or `normal:mean:sd`.
    #[arg(long, default_value = "auto", allow_hyphen_values = true)]
    pub f0: String,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Print the scenario registry and exit.
    #[arg(long)]
    pub list: bool,
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Sample sizes at which to record KL(f*, f_n), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Vec<usize>,
    /// Replications for convergence curves (seeds seed, seed+1, ...).
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    /// Fitted kernel for curves (default: the scenario's own kernel).
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta: Option<Vec<f64>>,
    #[arg(long, default_value = "auto")]
    pub grid: String,
}

/// Parse `args` (including the program name), run, and report.
///
/// Returns the process exit code: 0 on success, 1 for usage and input
/// errors, 2 when estimation fails.
pub fn main_from<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return 0;
            }
            let _ = e.print();
            let err = CliError::Usage(e.kind().to_string());
            report(&err);
            return err.exit_code();
        }
    };
    let stdout = std::io::stdout();
    match run(cli.command, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(err) => {
            report(&err);
            err.exit_code()
        }
    }
}

fn report(err: &CliError) {
    eprintln!("error: {err}");
    if let Ok(line) = serde_json::to_string(&err.record()) {
        eprintln!("{line}");
    }
}

/// Dispatch one subcommand. Results go to `--output` when given, otherwise
/// to `out`.
pub fn run(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Fit(a) => fit(a, out),
        Command::Prml(a) => prml(a, out),
        Command::Fdr(a) => fdr(a, out),
        Command::Regress(a) => regress(a, out),
        Command::Npmle(a) => npmle_cmd(a, out),
        Command::Predict(a) => predict(a, out),
        Command::Simulate(a) => simulate(a, out),
    }
}

fn schedule(common: &CommonArgs) -> Result<WeightSchedule> {
    Ok(WeightSchedule::new(common.c, common.gamma)?)
}

fn load(common: &CommonArgs, columns: ColumnSpec) -> Result<(Dataset, ColumnSpec)> {
    let path = common
        .input
        .as_deref()
        .ok_or_else(|| CliError::Usage("--input is required".into()))?;
    let data = ingest::ingest_csv(path, &columns)?;
    Ok((data, columns))
}

fn column_spec(c: &ColumnArgs) -> ColumnSpec {
    ColumnSpec {
        response: c.column.clone(),
        trials: c.trials.clone(),
        predictors: Vec::new(),
    }
}

fn header(command: &str, common: &CommonArgs, columns: ColumnSpec, settings: Value) -> RunHeader {
    RunHeader::new(RunConfig {
        command: command.to_string(),
        input: common.input.clone(),
        columns,
        output: common.output.clone(),
        seed: common.seed,
        jobs: common.jobs,
        settings,
    })
}

/// Write the JSON summary and tables. Without `--output` the JSON goes to
/// `out` and the tables are dropped.
fn emit(output: Option<&Path>, out: &mut dyn Write, summary: &impl serde::Serialize, tables: &[Table]) -> Result<()> {
    match output {
        Some(path) => {
            artifact::write_json(path, summary)?;
            for t in tables {
                t.save(&artifact::table_path(path, &t.name))?;
            }
            Ok(())
        }
        None => {
            let text = serde_json::to_string_pretty(summary)?;
            writeln!(out, "{text}").map_err(|e| CliError::io("<stdout>", e))
        }
    }
}

fn parse_kernel(name: &str, theta: Option<&[f64]>) -> Result<Kernel> {
    let family: KernelFamily = name.parse()?;
    let theta: Vec<f64> = match (family, theta) {
        (_, Some(t)) => t.to_vec(),
        (KernelFamily::Gauss, None) => vec![1.0],
        (KernelFamily::TwoGroups, None) => {
            return Err(CliError::Usage(
                "the twogroups kernel needs --theta mu,tau,sigma".into(),
            ))
        }
        (_, None) => Vec::new(),
    };
    Ok(family.with_theta(&theta)?)
}

fn data_range(ys: &[f64]) -> (f64, f64) {
    ys.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)))
}

/// Default mixing grid for a kernel, sized from the data.
pub fn auto_grid(kernel: &Kernel, ys: &[f64]) -> GridSpec {
    let (min, max) = data_range(ys);
    match *kernel {
        Kernel::Poisson => GridSpec::new(0.0, (1.25 * max).max(1.0), 400),
        Kernel::Binomial => GridSpec::new(0.0, 1.0, 200),
        Kernel::GaussLocation { sigma } => {
            if max > min {
                GridSpec::new(min, max, 400)
            } else {
                GridSpec::new(min - 3.0 * sigma, max + 3.0 * sigma, 400)
            }
        }
        Kernel::GaussScale => {
            let s = copula::robust_sd(ys);
            GridSpec {
                rule: predrec_core::QuadratureRule::LogMidpoint,
                ..GridSpec::new(0.1 * s, 10.0 * s, 200)
            }
        }
        Kernel::TwoGroups { .. } => GridSpec {
            atoms: vec![0.0],
            ..GridSpec::new(-1.0, 1.0, 100)
        },
    }
}

fn resolve_grid(text: &str, kernel: &Kernel, ys: &[f64]) -> Result<GridSpec> {
    if text == "auto" {
        Ok(auto_grid(kernel, ys))
    } else {
        Ok(text.parse()?)
    }
}

fn build_grid(spec: &GridSpec) -> Result<Arc<MixingGrid>> {
    Ok(Arc::new(spec.build()?))
}

fn parse_bounds(text: &str) -> Result<ThetaBox> {
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for part in text.split(',') {
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad bound `{t}` in `{text}`")))
        };
        match part.split_once(':') {
            Some((l, u)) => {
                lower.push(num(l)?);
                upper.push(num(u)?);
            }
            None => {
                let v = num(part)?;
                lower.push(v);
                upper.push(v);
            }
        }
    }
    Ok(ThetaBox::new(lower, upper)?)
}

fn density_table(p: &MixingDensity) -> Table {
    let mut t = Table::new("density", &["u", "weight", "atom", "density", "mass"]);
    let g = p.grid();
    for (j, m) in p.masses().into_iter().enumerate() {
        t.push(vec![
            g.nodes()[j],
            g.weights()[j],
            f64::from(u8::from(g.is_atom(j))),
            p.values()[j],
            m,
        ]);
    }
    t
}

/// Fitted marginal density over a plotting range; `None` for kernels whose
/// density depends on per-case covariates.
fn predictive_table(kernel: &Kernel, p: &MixingDensity, ys: &[f64]) -> Result<Option<Table>> {
    let (min, max) = data_range(ys);
    let points: Vec<f64> = match *kernel {
        Kernel::Poisson => (0..=((1.5 * max).ceil() as u64 + 5)).map(|k| k as f64).collect(),
        Kernel::Binomial => return Ok(None),
        _ => {
            let pad = 3.0 * copula::robust_sd(ys).max(kernel.theta().last().copied().unwrap_or(1.0));
            let (lo, hi) = (min - pad, max + pad);
            (0..401).map(|k| lo + (hi - lo) * k as f64 / 400.0).collect()
        }
    };
    let mut t = Table::new("predictive", &["y", "f"]);
    for y in points {
        t.push(vec![y, kernel::mixture_density(kernel, p, &Observation::new(y))?]);
    }
    Ok(Some(t))
}

fn fit(a: FitArgs, out: &mut dyn Write) -> Result<()> {
    let (data, columns) = load(&a.common, column_spec(&a.columns))?;
    let kernel = parse_kernel(&a.model.kernel, a.model.theta.as_deref())?;
    let ys = data.responses();
    let spec = resolve_grid(&a.model.grid, &kernel, &ys)?;
    let grid = build_grid(&spec)?;
    let sched = schedule(&a.common)?;
    let perms = a.common.perms.unwrap_or(25);
    let p0 = MixingDensity::uniform(grid);
    let fit = harness::averaged_fit(
        &data.observations,
        &kernel,
        &p0,
        &sched,
        perms,
        a.common.seed,
        a.common.jobs,
    )?;
    let settings = json!({
        "kernel": kernel.family().name(), "theta": kernel.theta(), "grid": spec.to_string(),
        "c": sched.c(), "gamma": sched.gamma(), "perms": perms, "p0": "uniform",
    });
    let mut art = FitArtifact::from_fit(header("fit", &a.common, columns, settings), &fit);
    art.extra = json!({
        "rows": data.rows(),
        "log_likelihood": fit.log_likelihood(&data.observations)?,
        "mixing_mean": fit.density.expect(|u| u),
    });
    let mut tables = vec![density_table(&fit.density)];
    tables.extend(predictive_table(&kernel, &fit.density, &ys)?);
    let mut steps = Table::new("log_predictive", &["i", "log_predictive"]);
    for (i, v) in fit.per_step_log_predictive.iter().enumerate() {
        steps.push(vec![(i + 1) as f64, *v]);
    }
    tables.push(steps);
    emit(a.common.output.as_deref(), out, &art, &tables)
}

fn prml(a: PrmlArgs, out: &mut dyn Write) -> Result<()> {
    let (data, columns) = load(&a.common, column_spec(&a.columns))?;
    let family: KernelFamily = a.model.kernel.parse()?;
    if family.theta_dim() == 0 {
        return Err(CliError::Usage(format!(
            "kernel `{}` has no parameters to estimate; use `fit`",
            family.name()
        )));
    }
    let ys = data.responses();
    let bounds = match (&a.bounds, family) {
        (Some(b), _) => parse_bounds(b)?,
        (None, KernelFamily::TwoGroups) => twogroups::default_box(),
        (None, _) => {
            let s = copula::robust_sd(&ys);
            ThetaBox::interval(0.1 * s, 2.0 * s)?
        }
    };
    // the grid is sized with the kernel at the box center
    let center = family.with_theta(&bounds.center())?;
    let spec = resolve_grid(&a.model.grid, &center, &ys)?;
    let grid = build_grid(&spec)?;
    let sched = schedule(&a.common)?;
    let perms = a.common.perms.unwrap_or(1);
    let opts = PrmlOptions {
        scan_points: a.scan_points,
        tol: a.tol,
        max_evals: a.max_evals,
        n_perm: perms,
        seed: a.common.seed,
    };
    let p0 = MixingDensity::uniform(grid);
    let res = semiparam::prml_optimize(&data.observations, family, &bounds, &p0, &sched, &opts)?;
    let settings = json!({
        "kernel": family.name(), "grid": spec.to_string(), "c": sched.c(), "gamma": sched.gamma(), "perms": perms,
        "bounds": { "lower": bounds.lower(), "upper": bounds.upper() },
        "scan_points": opts.scan_points, "tol": opts.tol, "max_evals": opts.max_evals, "p0": "uniform",
    });
    let mut art = FitArtifact::from_fit(header("prml", &a.common, columns, settings), &res.fit);
    let named: serde_json::Map<String, Value> = family
        .theta_names()
        .iter()
        .zip(&res.theta)
        .map(|(n, v)| (n.to_string(), json!(v)))
        .collect();
    art.extra = json!({ "theta": named, "log_lik": res.log_lik, "evaluations": res.trace.len(), "rows": data.rows() });
    let mut trace = Table::new("trace", &["eval", "log_lik", "best"]);
    trace.columns.extend(family.theta_names().iter().map(|s| s.to_string()));
    for (k, e) in res.trace.iter().enumerate() {
        let mut row = vec![(k + 1) as f64, e.log_lik, e.best];
        row.extend(&e.theta);
        trace.push(row);
    }
    let mut tables = vec![density_table(&res.fit.density), trace];
    tables.extend(predictive_table(&res.fit.kernel, &res.fit.density, &ys)?);
    emit(a.common.output.as_deref(), out, &art, &tables)
}

fn fdr(a: FdrArgs, out: &mut dyn Write) -> Result<()> {
    let (data, columns) = load(&a.common, column_spec(&a.columns))?;
    let z = data.responses();
    let spec = if a.grid == "auto" {
        auto_grid(&Kernel::two_groups(0.0, 1.0, 1.0)?, &z)
    } else {
        a.grid.parse()?
    };
    let grid = build_grid(&spec)?;
    let bounds = match &a.bounds {
        Some(b) => parse_bounds(b)?,
        None => twogroups::default_box(),
    };
    let sched = schedule(&a.common)?;
    let perms = a.common.perms.unwrap_or(1);
    let opts = TwoGroupsOptions {
        initial_null_mass: a.null_mass,
        pi_cap: a.pi_cap,
        prml: PrmlOptions {
            max_evals: a.max_evals,
            n_perm: perms,
            seed: a.common.seed,
            ..PrmlOptions::default()
        },
    };
    let fit = twogroups::twogroups_fit(&z, &bounds, &grid, &sched, &opts)?;
    let dec = twogroups::fdr_test(&fit, &z, a.cutoff)?;

    let mut cases = Table::new("cases", &["row", "z", "fdr", "reject"]);
    for (i, &y) in z.iter().enumerate() {
        cases.push(vec![(i + 1) as f64, y, dec.fdr[i], f64::from(u8::from(dec.reject[i]))]);
    }
    let (min, max) = data_range(&z);
    let (lo, hi) = (min - 1.0, max + 1.0);
    let mut plot = Table::new("plot", &["y", "f", "null_part", "alt_part", "fdr"]);
    for k in 0..=400 {
        let y = lo + (hi - lo) * k as f64 / 400.0;
        let (f, null, alt) = fit.components(y);
        plot.push(vec![y, f, null, alt, twogroups::local_fdr(&fit, y)]);
    }
    let settings = json!({
        "grid": spec.to_string(), "c": sched.c(), "gamma": sched.gamma(), "perms": perms,
        "bounds": { "lower": bounds.lower(), "upper": bounds.upper() },
        "cutoff": a.cutoff, "null_mass": a.null_mass, "pi_cap": a.pi_cap, "max_evals": a.max_evals,
    });
    let summary = json!({
        "header": header("fdr", &a.common, columns, settings),
        "n": z.len(),
        "pi_hat": fit.pi_hat, "mu_hat": fit.mu_hat, "tau_hat": fit.tau_hat, "sigma_hat": fit.sigma_hat,
        "capped": fit.capped, "log_lik": fit.log_lik, "evaluations": fit.trace.len(),
        "cutoff": dec.cutoff, "n_rejected": dec.n_rejected(), "n_up": dec.n_up, "n_down": dec.n_down,
        "lower_threshold": dec.lower_threshold, "upper_threshold": dec.upper_threshold,
        "grid": GridRecord::from_grid(fit.density.grid()),
        "density": fit.density.values(),
    });
    emit(
        a.common.output.as_deref(),
        out,
        &summary,
        &[cases, plot, density_table(&fit.density)],
    )
}

/// `y ~ a + poly(b, 2)` into the response and `(column, degree)` terms.
pub fn parse_formula(text: &str) -> Result<(String, Vec<(String, usize)>)> {
    let bad = || CliError::Usage(format!("cannot parse formula `{text}`"));
    let (lhs, rhs) = text.split_once('~').ok_or_else(bad)?;
    let response = lhs.trim();
    if response.is_empty() {
        return Err(bad());
    }
    let mut terms = Vec::new();
    for term in rhs.split('+') {
        let term = term.trim();
        if let Some(inner) = term.strip_prefix("poly(").and_then(|t| t.strip_suffix(')')) {
            let (col, deg) = inner.split_once(',').ok_or_else(bad)?;
            let deg: usize = deg.trim().parse().map_err(|_| bad())?;
            if deg == 0 {
                return Err(bad());
            }
            terms.push((col.trim().to_string(), deg));
        } else if !term.is_empty() && !term.contains(['(', ')', ',']) {
            terms.push((term.to_string(), 1));
        } else {
            return Err(bad());
        }
    }
    Ok((response.to_string(), terms))
}

fn regress(a: RegressArgs, out: &mut dyn Write) -> Result<()> {
    let (response, terms) = match &a.formula {
        Some(f) => {
            let (r, t) = parse_formula(f)?;
            (Some(r), t)
        }
        None => {
            if a.poly == 0 {
                return Err(CliError::Usage("--poly must be at least 1".into()));
            }
            (a.column.clone(), a.x.iter().map(|c| (c.clone(), a.poly)).collect())
        }
    };
    if terms.is_empty() {
        return Err(CliError::Usage(
            "regression needs at least one predictor (--x or --formula)".into(),
        ));
    }
    let columns = ColumnSpec {
        response,
        trials: None,
        predictors: terms.iter().map(|t| t.0.clone()).collect(),
    };
    let (data, columns) = load(&a.common, columns)?;
    let y = data.responses();

    let mut names = vec!["intercept".to_string()];
    let mut rows = vec![vec![1.0]; y.len()];
    for ((col, deg), values) in terms.iter().zip(&data.predictors) {
        for d in 1..=*deg {
            names.push(if d == 1 { col.clone() } else { format!("{col}^{d}") });
            for (row, v) in rows.iter_mut().zip(values) {
                row.push(v.powi(d as i32));
            }
        }
    }
    let x = predrec_core::linalg::Matrix::from_rows(&rows)?;

    let mut opts = RegressionOptions {
        tol: a.tol,
        max_iter: a.max_iter,
        ..RegressionOptions::default()
    };
    if a.grid != "auto" {
        let g: GridSpec = a.grid.parse()?;
        opts.scale_lo = g.lo;
        opts.scale_hi = g.hi;
        opts.scale_nodes = g.m;
    }
    opts.relative_scale = !a.absolute_scale;
    let sched = schedule(&a.common)?;
    let fit = robust::prem_fit(&x, &y, &sched, &opts)?;

    let fitted = x.mul_vec(&fit.beta);
    let mut cases = Table::new("cases", &["row", "y", "fitted", "residual", "weight"]);
    for i in 0..y.len() {
        cases.push(vec![(i + 1) as f64, y[i], fitted[i], y[i] - fitted[i], fit.weights[i]]);
    }
    let mut scale = Table::new("scale", &["s", "weight", "density"]);
    let g = fit.scale_density.grid();
    for j in 0..g.len() {
        scale.push(vec![g.nodes()[j], g.weights()[j], fit.scale_density.values()[j]]);
    }
    let mut trace = Table::new("trace", &["iteration", "objective", "step_halvings"]);
    trace.columns.extend(names.iter().cloned());
    for (k, r) in fit.trace.iter().enumerate() {
        let mut row = vec![k as f64, r.objective, r.step_halvings as f64];
        row.extend(&r.beta);
        trace.push(row);
    }
    let coef = |b: &[f64]| -> serde_json::Map<String, Value> {
        names.iter().zip(b).map(|(n, v)| (n.clone(), json!(v))).collect()
    };
    let settings = json!({
        "terms": terms.iter().map(|(c, d)| json!({ "column": c, "degree": d })).collect::<Vec<_>>(),
        "scale_grid": { "lo": opts.scale_lo, "hi": opts.scale_hi, "m": opts.scale_nodes, "relative": opts.relative_scale },
        "c": sched.c(), "gamma": sched.gamma(), "tol": opts.tol, "max_iter": opts.max_iter,
    });
    let summary = json!({
        "header": header("regress", &a.common, columns, settings),
        "n": y.len(),
        "beta": coef(&fit.beta),
        "beta_ols": coef(&fit.beta_ols),
        "residual_scale": fit.residual_scale,
        "converged": fit.converged,
        "stop": format!("{:?}", fit.stop).to_lowercase(),
        "iterations": fit.trace.len().saturating_sub(1),
    });
    emit(a.common.output.as_deref(), out, &summary, &[cases, scale, trace])
}

fn npmle_cmd(a: NpmleArgs, out: &mut dyn Write) -> Result<()> {
    let (data, columns) = load(&a.common, column_spec(&a.columns))?;
    let kernel = parse_kernel(&a.model.kernel, a.model.theta.as_deref())?;
    let ys = data.responses();
    let spec = resolve_grid(&a.model.grid, &kernel, &ys)?;
    let grid = build_grid(&spec)?;
    let opts = NpmleOptions {
        tol: a.tol,
        max_iter: a.max_iter,
    };
    let state = npmle::npmle_fit(&data.observations, &kernel, grid, &opts)?;

    let mut density = density_table(&state.density);
    density.columns.push("gradient".into());
    for (row, g) in density.rows.iter_mut().zip(&state.gradient) {
        row.push(*g);
    }
    let mut trace = Table::new("trace", &["iteration", "log_lik"]);
    for (k, l) in state.log_lik_trace.iter().enumerate() {
        trace.push(vec![(k + 1) as f64, *l]);
    }
    let mut tables = vec![density, trace];
    tables.extend(predictive_table(&kernel, &state.density, &ys)?);
    let settings = json!({
        "kernel": kernel.family().name(), "theta": kernel.theta(), "grid": spec.to_string(),
        "tol": opts.tol, "max_iter": opts.max_iter, "p0": "uniform",
    });
    let summary = json!({
        "header": header("npmle", &a.common, columns, settings),
        "n": data.rows(),
        "kernel": KernelRecord::from_kernel(&kernel),
        "grid": GridRecord::from_grid(state.density.grid()),
        "density": state.density.values(),
        "iterations": state.iterations,
        "converged": state.converged,
        "last_change": state.last_change,
        "sup_gradient": state.sup_gradient,
        "log_likelihood": state.log_likelihood(),
    });
    emit(a.common.output.as_deref(), out, &summary, &tables)
}

fn parse_initial(text: &str) -> Result<InitialDensity> {
    if text == "auto" {
        return Ok(InitialDensity::Auto);
    }
    let bad = || CliError::Usage(format!("--f0 expects `auto` or `normal:mean:sd`, got `{text}`"));
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        ["normal", mean, sd] => Ok(InitialDensity::Normal {
            mean: mean.trim().parse().map_err(|_| bad())?,
            sd: sd.trim().parse().map_err(|_| bad())?,
        }),
        _ => Err(bad()),
    }
}

fn parse_ygrid(text: &str) -> Result<YGridSpec> {
    if text == "auto" {
        return Ok(YGridSpec::Auto);
    }
    let g: GridSpec = text.parse()?;
    Ok(YGridSpec::Explicit {
        lo: g.lo,
        hi: g.hi,
        m: g.m,
    })
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> Result<()> {
    let columns = ColumnSpec {
        response: a.column.clone(),
        ..ColumnSpec::default()
    };
    let (data, columns) = load(&a.common, columns)?;
    let ys = data.responses();
    let f0 = parse_initial(&a.f0)?;
    let ygrid = parse_ygrid(&a.ygrid)?;
    let sched = schedule(&a.common)?;
    let perms = a.common.perms.unwrap_or(1);
    let state = if perms == 1 {
        copula::copula_fit(&ys, &f0, a.rho, sched, ygrid)?
    } else {
        copula::copula_fit_averaged(&ys, &f0, a.rho, sched, ygrid, perms, a.common.seed)?
    };
    let (lo, hi, m) = ygrid.resolve(&ys)?;
    let mut density = Table::new("density", &["y", "f"]);
    let mut cdf = Table::new("cdf", &["y", "F"]);
    for ((y, f), c) in state.y_grid().iter().zip(state.density()).zip(state.cdf()) {
        density.push(vec![*y, *f]);
        cdf.push(vec![*y, *c]);
    }
    if a.common.output.is_none() {
        return density.write_to(out);
    }
    let f0_text = match &f0 {
        InitialDensity::Normal { mean, sd } => format!("normal:{mean}:{sd}"),
        _ => "auto".to_string(),
    };
    let settings = json!({
        "rho": a.rho, "ygrid": { "lo": lo, "hi": hi, "m": m }, "f0": f0_text,
        "c": sched.c(), "gamma": sched.gamma(), "perms": perms,
    });
    let drift = state.mass_drift().iter().fold(0.0_f64, |a, d| a.max(d.abs()));
    let summary = json!({
        "header": header("predict", &a.common, columns, settings),
        "n": state.n(),
        "log_predictive": state.log_predictive().iter().sum::<f64>(),
        "max_mass_drift": drift,
        "y": state.y_grid(),
        "density": state.density(),
    });
    emit(a.common.output.as_deref(), out, &summary, &[density, cdf])
}

fn scenario_kernel(s: &SimScenario) -> Kernel {
    match &s.truth {
        Truth::Mixture { kernel, .. } => *kernel,
        Truth::Normal { .. } => Kernel::GaussLocation { sigma: 1.0 },
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let io = |e| CliError::io("<stdout>", e);
    if a.list {
        for (name, about) in sim::SCENARIOS {
            writeln!(out, "{name:<16} {about}").map_err(io)?;
        }
        return Ok(());
    }
    let name = a
        .scenario
        .as_deref()
        .ok_or_else(|| CliError::Usage("--scenario is required (see --list)".into()))?;
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let scenario = SimScenario::named(name, a.n, a.common.seed)?;
    if !a.checkpoints.is_empty() {
        return curves(&a, scenario, out);
    }
    let draws = sim::simulate_latent(&scenario);
    let binomial = scenario.trials.is_some();
    let mut cols = vec!["y"];
    if binomial {
        cols.push("trials");
    }
    cols.push("u");
    let mut table = Table::new("data", &cols);
    for (u, obs) in &draws {
        let mut row = vec![obs.y];
        if binomial {
            row.push(obs.trials.unwrap_or(0) as f64);
        }
        row.push(u.unwrap_or(f64::NAN));
        table.push(row);
    }
    if a.common.output.is_none() {
        return table.write_to(out);
    }
    let n = draws.len() as f64;
    let mean = draws.iter().map(|d| d.1.y).sum::<f64>() / n;
    let var = draws.iter().map(|d| (d.1.y - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let settings = json!({ "scenario": name, "n": a.n });
    let summary = json!({
        "header": header("simulate", &a.common, ColumnSpec::default(), settings),
        "scenario": name,
        "n": draws.len(),
        "sample_mean": mean, "sample_variance": var,
        "true_mean": scenario.true_mean(), "true_variance": scenario.true_variance(),
    });
    emit(a.common.output.as_deref(), out, &summary, &[table])
}

fn curves(a: &SimulateArgs, scenario: SimScenario, out: &mut dyn Write) -> Result<()> {
    let checkpoints = &a.checkpoints;
    if checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::Usage("--checkpoints must be strictly increasing".into()));
    }
    if a.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let kernel = match &a.kernel {
        Some(k) => parse_kernel(k, a.theta.as_deref())?,
        None => scenario_kernel(&scenario),
    };
    let n_max = *checkpoints.last().expect("non-empty");
    let pilot = sim::simulate(&SimScenario {
        n: n_max.max(1),
        ..scenario.clone()
    });
    let ys: Vec<f64> = pilot.iter().map(|o| o.y).collect();
    let spec = resolve_grid(&a.grid, &kernel, &ys)?;
    let grid = build_grid(&spec)?;
    let est = EstimatorSpec {
        kernel,
        p0: MixingDensity::uniform(grid),
        schedule: schedule(&a.common)?,
    };
    let runs = harness::replicates(a.common.seed, a.reps, a.common.jobs, |seed| {
        sim::convergence_curve(
            &SimScenario {
                seed,
                ..scenario.clone()
            },
            &est,
            checkpoints,
        )
    })?;
    let mut per_seed = Vec::with_capacity(runs.len());
    for (seed, curve) in runs {
        per_seed.push((seed, curve?));
    }
    let mut table = Table::new("curve", &["n", "median_kl", "min_kl", "max_kl"]);
    let mut median_curve = Vec::new();
    for (k, &n) in checkpoints.iter().enumerate() {
        let kls: Vec<f64> = per_seed.iter().map(|(_, c)| c[k].1).collect();
        let med = median(kls.clone());
        let lo = kls.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = kls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        table.push(vec![n as f64, med, lo, hi]);
        median_curve.push((n, med));
    }
    let slope = sim::loglog_slope(&median_curve);
    let settings = json!({
        "scenario": scenario.name, "checkpoints": checkpoints, "reps": a.reps,
        "kernel": kernel.family().name(), "theta": kernel.theta(), "grid": spec.to_string(),
        "c": est.schedule.c(), "gamma": est.schedule.gamma(), "p0": "uniform",
    });
    let summary = json!({
        "header": header("simulate", &a.common, ColumnSpec::default(), settings),
        "median_curve": median_curve,
        "loglog_slope": if slope.is_finite() { json!(slope) } else { Value::Null },
        "curves": per_seed.iter().map(|(s, c)| json!({ "seed": s, "points": c })).collect::<Vec<_>>(),
    });
    emit(a.common.output.as_deref(), out, &summary, &[table])
}
