//! Command-line front end: configuration, argument parsing and the commands
//! behind the `curlfree` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::bench::{
    charge_sequence, residual_profile, run_convergence_study, run_time_series, timed, CaseKind, ManufacturedCase,
    EpsSampling, Permittivity, StudyOptions, TimeSeriesSpec, STUDY_TOL,
};
use crate::grid::{average_node, edge_coeff, EdgeCoeff, GridSpec, NodeField};
use crate::io;
use crate::oracle::direct_solve;
use crate::relax::RelaxMethod;
use crate::solver::{recover_potential, solve, Problem, SolveStatus, StopRule, DEFAULT_MAX_PASSES, DEFAULT_TOL};

/// Builtin problem sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    Trig2d,
    Trig3d,
    TimeSeriesHom,
    TimeSeriesInhom,
    /// Seeded uniform charge on (−1, 1), mean-centred, with the `eq27` permittivity.
    Random,
}

impl std::str::FromStr for Builtin {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> anyhow::Result<Self> {
        Ok(match s {
            "eq27" => Builtin::Trig2d,
            "eq27_3d" => Builtin::Trig3d,
            "timeseries_hom" => Builtin::TimeSeriesHom,
            "timeseries_inhom" => Builtin::TimeSeriesInhom,
            "random" => Builtin::Random,
            other => bail!(
                "unknown case `{other}` (expected eq27, eq27_3d, timeseries_hom, timeseries_inhom or random)"
            ),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: Option<usize>,
    pub cells: Option<Vec<usize>>,
    pub extent: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Builtin case name.
    pub case: Option<String>,
    /// Node charge density CSV; requires `[grid]`.
    pub rho_csv: Option<PathBuf>,
    /// Node permittivity CSV; defaults to `eps_const`.
    pub eps_csv: Option<PathBuf>,
    pub eps_const: Option<f64>,
    /// Permittivity placement for manufactured cases: edge or average.
    pub eps_sampling: Option<String>,
    pub center_rho: Option<bool>,
    /// Resolution for builtin cases.
    #[serde(rename = "N")]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Option<String>,
    pub tol: Option<f64>,
    pub max_passes: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(rename = "Ns")]
    pub ns: Option<Vec<usize>>,
    pub methods: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub checkpoints: Option<Vec<usize>>,
    pub section_y: Option<f64>,
    pub methods: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSeriesConfig {
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub methods: Option<Vec<String>>,
    pub compare_cold: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub emit_fields: Option<bool>,
    pub emit_phi: Option<bool>,
    pub emit_report: Option<bool>,
    /// Record measured wall times; otherwise they are written as zero.
    pub timings: Option<bool>,
}

/// Contents of a TOML run configuration. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default)]
    pub profile: ProfileConfig,
    #[serde(default)]
    pub timeseries: TimeSeriesConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> anyhow::Result<Self> {
        toml::from_str(text).with_context(|| format!("invalid config {}", origin.display()))
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text, path)
    }
}

#[derive(Debug, Parser)]
#[command(name = "curlfree", version, about = "Periodic Poisson solver by curl-free relaxation of the electric field")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Relaxation method: single, forward or zigzag.
    #[arg(long, global = true)]
    pub method: Option<String>,
    /// Per-pass energy-drop tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Seed for the random and time-series charge densities.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Pass budget; hitting it exits with status 2.
    #[arg(long = "max-passes", global = true)]
    pub max_passes: Option<usize>,
    /// Subtract the mean of the charge density instead of rejecting it.
    #[arg(long = "center-rho", global = true)]
    pub center_rho: bool,
    /// Measure and record wall times.
    #[arg(long, global = true)]
    pub timings: bool,
    /// Builtin case: eq27, eq27_3d, timeseries_hom, timeseries_inhom, random.
    #[arg(long, global = true)]
    pub case: Option<String>,
    /// Resolution per axis for builtin cases.
    #[arg(long = "N", global = true)]
    pub n: Option<usize>,
    /// Permittivity placement for eq27 cases: edge (exact midpoint values) or average.
    #[arg(long = "eps-sampling", global = true)]
    pub eps_sampling: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one problem and write the field, optional potential and report.
    Solve {
        #[arg(long)]
        rho: Option<PathBuf>,
        #[arg(long)]
        eps: Option<PathBuf>,
        /// Also write the recovered potential.
        #[arg(long = "emit-phi")]
        emit_phi: bool,
    },
    /// Manufactured-solution convergence study.
    Study {
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long = "Ns", value_delimiter = ',')]
        ns: Option<Vec<usize>>,
    },
    /// Curl residual along a horizontal section at selected pass counts.
    Profile {
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        checkpoints: Option<Vec<usize>>,
        #[arg(long = "section-y")]
        section_y: Option<f64>,
    },
    /// Warm-started solves of a seeded sequence of charge densities.
    Timeseries {
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long)]
        steps: Option<usize>,
        /// Also solve every step from a cold start.
        #[arg(long = "compare-cold")]
        compare_cold: bool,
    },
    /// Compare every relaxation method with the direct solver.
    OracleCheck {
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
    },
}

/// How a command finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Converged,
    MaxPassesReached,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Converged => 0,
            Outcome::MaxPassesReached => 2,
        }
    }

    fn from_statuses(statuses: impl IntoIterator<Item = SolveStatus>) -> Self {
        if statuses.into_iter().any(|s| s == SolveStatus::MaxPassesReached) {
            Outcome::MaxPassesReached
        } else {
            Outcome::Converged
        }
    }
}

/// Command settings after merging the config file and the flags.
struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    method: RelaxMethod,
    tol: Option<f64>,
    max_passes: usize,
    seed: u64,
    center_rho: bool,
    timings: bool,
    case: Option<Builtin>,
    n: Option<usize>,
    sampling: EpsSampling,
}

fn parse_methods(list: &[String]) -> anyhow::Result<Vec<RelaxMethod>> {
    list.iter().map(|m| Ok(m.parse::<RelaxMethod>()?)).collect()
}

impl Ctx {
    fn new(common: &CommonArgs) -> anyhow::Result<Self> {
        let cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let method = common.method.clone().or(cfg.solver.method.clone()).unwrap_or_else(|| "zigzag".into());
        let case = common.case.clone().or(cfg.problem.case.clone()).map(|c| c.parse()).transpose()?;
        let tol = common.tol.or(cfg.solver.tol);
        if let Some(t) = tol {
            if t.is_nan() || t <= 0.0 {
                bail!("tolerance must be positive, got {t}");
            }
        }
        Ok(Self {
            out: common.out.clone().or(cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("curlfree-out")),
            method: method.parse()?,
            tol,
            max_passes: common.max_passes.or(cfg.solver.max_passes).unwrap_or(DEFAULT_MAX_PASSES),
            seed: common.seed.or(cfg.timeseries.seed).unwrap_or(0),
            center_rho: common.center_rho || cfg.problem.center_rho.unwrap_or(false),
            timings: common.timings || cfg.output.timings.unwrap_or(false),
            case,
            n: common.n.or(cfg.problem.n),
            sampling: common
                .eps_sampling
                .clone()
                .or(cfg.problem.eps_sampling.clone())
                .map(|s| s.parse())
                .transpose()?
                .unwrap_or_default(),
            cfg,
        })
    }

    fn out_dir(&self) -> anyhow::Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("cannot create {}", self.out.display()))?;
        Ok(&self.out)
    }

    fn write(&self, name: &str, contents: &str) -> anyhow::Result<PathBuf> {
        let path = self.out_dir()?.join(name);
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        info!("wrote {}", path.display());
        Ok(path)
    }

    fn methods_or_all(&self, flag: &Option<Vec<String>>, cfg: &Option<Vec<String>>) -> anyhow::Result<Vec<RelaxMethod>> {
        match flag.as_ref().or(cfg.as_ref()) {
            Some(list) => parse_methods(list),
            None => Ok(RelaxMethod::ALL.to_vec()),
        }
    }

    fn grid_from_config(&self) -> anyhow::Result<GridSpec> {
        let g = &self.cfg.grid;
        let cells = g.cells.clone().context("[grid] cells is required for CSV input")?;
        let extent = g.extent.clone().unwrap_or_else(|| vec![crate::bench::DOMAIN_LENGTH; cells.len()]);
        if let Some(d) = g.dim {
            if d != cells.len() {
                bail!("[grid] dim = {d} but cells has {} entries", cells.len());
            }
        }
        Ok(GridSpec::new(&extent, &cells)?)
    }

    fn finish_problem(&self, rho: NodeField, eps: EdgeCoeff) -> anyhow::Result<Problem> {
        let p = if self.center_rho {
            Problem::centered_with_edge_eps(rho, eps)?
        } else {
            Problem::with_edge_eps(rho, eps)?
        };
        if p.rho_shift() != 0.0 {
            warn!("subtracted charge density mean {:e}", p.rho_shift());
        }
        Ok(p.with_method(self.method).with_max_passes(self.max_passes).with_tol(self.tol.unwrap_or(DEFAULT_TOL)))
    }

    /// The problem to solve plus the manufactured case when there is one.
    fn problem(&self, rho_path: Option<&Path>, eps_path: Option<&Path>, default: Builtin, default_n: usize)
        -> anyhow::Result<(Problem, Option<ManufacturedCase>)> {
        let rho_path = rho_path.map(Path::to_path_buf).or(self.cfg.problem.rho_csv.clone());
        if let Some(rho_path) = rho_path {
            let spec = self.grid_from_config()?;
            let rho = io::read_node_csv(&rho_path, &spec)?;
            let eps = match eps_path.map(Path::to_path_buf).or(self.cfg.problem.eps_csv.clone()) {
                Some(p) => io::read_node_csv(&p, &spec)?,
                None => NodeField::constant(&spec, self.cfg.problem.eps_const.unwrap_or(1.0)),
            };
            return Ok((self.finish_problem(rho, edge_coeff(&eps)?)?, None));
        }
        let n = self.n.unwrap_or(default_n);
        match self.case.unwrap_or(default) {
            Builtin::Trig2d | Builtin::Trig3d => {
                let kind = if self.case.unwrap_or(default) == Builtin::Trig2d { CaseKind::Trig2d } else { CaseKind::Trig3d };
                let case = ManufacturedCase::new(kind, n)?.with_sampling(self.sampling);
                Ok((self.finish_problem(case.rho()?, case.eps_edges()?)?, Some(case)))
            }
            b @ (Builtin::TimeSeriesHom | Builtin::TimeSeriesInhom) => {
                let tss = self.time_series_spec(b, n, self.cfg.timeseries.steps.unwrap_or(1));
                let rho = charge_sequence(&tss)?.pop().context("time series needs at least one step")?;
                Ok((self.finish_problem(rho, edge_coeff(&tss.permittivity.nodes(&tss.spec()?))?)?, None))
            }
            Builtin::Random => {
                let spec = GridSpec::cube(2, n, crate::bench::DOMAIN_LENGTH)?;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let mut rho = NodeField::from_values(&spec, (0..spec.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
                let mean = average_node(&rho);
                rho.shift(-mean);
                Ok((self.finish_problem(rho, edge_coeff(&Permittivity::Inhomogeneous.nodes(&spec))?)?, None))
            }
        }
    }

    fn time_series_spec(&self, b: Builtin, n: usize, steps: usize) -> TimeSeriesSpec {
        let mut tss = TimeSeriesSpec::new(n, steps, self.seed);
        tss.tol = self.tol.unwrap_or(DEFAULT_TOL);
        tss.max_passes = self.max_passes;
        tss.timings = self.timings;
        tss.permittivity =
            if b == Builtin::TimeSeriesInhom { Permittivity::Inhomogeneous } else { Permittivity::Homogeneous };
        tss
    }
}

fn cmd_solve(ctx: &Ctx, rho: Option<&Path>, eps: Option<&Path>, emit_phi: bool) -> anyhow::Result<Outcome> {
    let (problem, case) = ctx.problem(rho, eps, Builtin::Trig2d, 32)?;
    let (sol, wall) = timed(ctx.timings, || solve(&problem, None))?;
    let mut report = sol.report;
    report.wall_time_ms = wall;
    report.error_inf = case.as_ref().map(|c| c.error_inf(&sol.field));
    if report.status == SolveStatus::MaxPassesReached {
        warn!("stopped after {} passes without meeting the tolerance", report.passes);
    }
    let out = &ctx.cfg.output;
    if out.emit_fields.unwrap_or(true) {
        io::write_field_csvs(ctx.out_dir()?, &sol.field)?;
    }
    if emit_phi || out.emit_phi.unwrap_or(false) {
        match recover_potential(&sol.field) {
            Ok(phi) => {
                ctx.write("phi.csv", &io::node_csv(&phi))?;
            }
            Err(e) => warn!("phi.csv not written: {e}"),
        }
    }
    if out.emit_report.unwrap_or(true) {
        ctx.write("report.json", &io::report_json(&report))?;
    }
    let mut line = format!("{} passes, gauss {:.3e}, curl {:.3e}", report.passes, report.gauss_residual, report.curl_residual);
    if let Some(err) = report.error_inf {
        let _ = write!(line, ", error_inf {}", io::fmt_float(err));
    }
    println!("{line}");
    Ok(Outcome::from_statuses([report.status]))
}

fn case_kind(ctx: &Ctx) -> anyhow::Result<CaseKind> {
    match ctx.case.unwrap_or(Builtin::Trig2d) {
        Builtin::Trig2d => Ok(CaseKind::Trig2d),
        Builtin::Trig3d => Ok(CaseKind::Trig3d),
        other => bail!("{other:?} has no exact solution; use eq27 or eq27_3d"),
    }
}

fn cmd_study(ctx: &Ctx, methods: &Option<Vec<String>>, ns: &Option<Vec<usize>>) -> anyhow::Result<Outcome> {
    let kind = case_kind(ctx)?;
    let methods = ctx.methods_or_all(methods, &ctx.cfg.study.methods)?;
    let default_ns = if kind == CaseKind::Trig2d { vec![32, 64, 128, 256] } else { vec![8, 16, 32] };
    let ns = ns.clone().or(ctx.cfg.study.ns.clone()).unwrap_or(default_ns);
    let opts = StudyOptions {
        tol: ctx.tol.unwrap_or(STUDY_TOL),
        max_passes: ctx.max_passes,
        timings: ctx.timings,
        sampling: ctx.sampling,
    };
    let rows = run_convergence_study(kind, &ns, &methods, opts)?;
    ctx.write("study.csv", &io::study_csv(&rows))?;
    for r in &rows {
        let order = r.order.map(|o| format!("{o:.4}")).unwrap_or_else(|| "-".into());
        println!("{:>8} N={:<4} error_inf {:.6e} order {order:>6} passes {}", r.method.name(), r.n, r.error_inf, r.passes);
    }
    Ok(Outcome::from_statuses(rows.iter().map(|r| r.status)))
}

fn cmd_profile(
    ctx: &Ctx,
    methods: &Option<Vec<String>>,
    checkpoints: &Option<Vec<usize>>,
    section_y: Option<f64>,
) -> anyhow::Result<Outcome> {
    let (problem, _) = ctx.problem(None, None, Builtin::Trig2d, 128)?;
    if problem.spec().dim() != 2 {
        bail!("profile needs a 2D problem");
    }
    let methods = ctx.methods_or_all(methods, &ctx.cfg.profile.methods)?;
    let checkpoints = checkpoints.clone().or(ctx.cfg.profile.checkpoints.clone()).unwrap_or_else(|| vec![0, 50, 100]);
    let y = section_y.or(ctx.cfg.profile.section_y).unwrap_or(0.5);
    let rows = residual_profile(&problem, &methods, &checkpoints, y)?;
    ctx.write("profile.csv", &io::profile_csv(&rows))?;
    for &m in &methods {
        for &cp in &checkpoints {
            let max = rows.iter().filter(|r| r.method == m && r.pass == cp).fold(0.0f64, |a, r| a.max(r.curl.abs()));
            println!("{:>8} pass {cp:<5} max|curl| {max:.6e}", m.name());
        }
    }
    Ok(Outcome::Converged)
}

fn cmd_timeseries(
    ctx: &Ctx,
    methods: &Option<Vec<String>>,
    steps: Option<usize>,
    compare_cold: bool,
) -> anyhow::Result<Outcome> {
    let builtin = ctx.case.unwrap_or(Builtin::TimeSeriesHom);
    if !matches!(builtin, Builtin::TimeSeriesHom | Builtin::TimeSeriesInhom) {
        bail!("timeseries needs case timeseries_hom or timeseries_inhom");
    }
    let methods = ctx.methods_or_all(methods, &ctx.cfg.timeseries.methods)?;
    let steps = steps.or(ctx.cfg.timeseries.steps).unwrap_or(100);
    let mut tss = ctx.time_series_spec(builtin, ctx.n.unwrap_or(64), steps);
    tss.compare_cold = compare_cold || ctx.cfg.timeseries.compare_cold.unwrap_or(false);
    let mut records = Vec::new();
    let mut statuses = Vec::new();
    for &m in &methods {
        let rep = run_time_series(&tss, m)?;
        let mut line = format!(
            "{:>8} N={} steps={} mean passes {:.3} mean edge touches {:.1}",
            m.name(),
            tss.n,
            rep.steps.len(),
            rep.mean_passes(),
            rep.mean_edge_touches()
        );
        if let Some(c) = rep.mean_cold_passes() {
            let _ = write!(line, " cold passes {c:.3}");
        }
        if ctx.timings {
            let _ = write!(line, " mean ms {:.3}", rep.mean_wall_ms());
            if let Some(s) = rep.spectral_mean_ms {
                let _ = write!(line, " spectral ms {s:.3}");
            }
        }
        println!("{line}");
        statuses.extend(rep.steps.iter().map(|s| {
            if s.passes >= tss.max_passes {
                SolveStatus::MaxPassesReached
            } else {
                SolveStatus::Converged
            }
        }));
        records.extend(rep.steps);
    }
    ctx.write("timeseries.csv", &io::timeseries_csv(&records))?;
    Ok(Outcome::from_statuses(statuses))
}

/// Curl-residual stop used by `oracle-check` when no tolerance is given.
pub const ORACLE_CHECK_CURL_TOL: f64 = 1e-12;

fn cmd_oracle_check(ctx: &Ctx, methods: &Option<Vec<String>>) -> anyhow::Result<Outcome> {
    let (problem, _) = ctx.problem(None, None, Builtin::Random, 16)?;
    let oracle = direct_solve(&problem)?;
    let methods = match methods {
        Some(list) => parse_methods(list)?,
        None => RelaxMethod::ALL.to_vec(),
    };
    let mut csv = String::from("method,passes,max_deviation\n");
    let mut statuses = Vec::new();
    for m in methods {
        let mut p = problem.clone().with_method(m);
        if ctx.tol.is_none() {
            p = p.with_stop_rule(StopRule::CurlResidual(ORACLE_CHECK_CURL_TOL));
        }
        let sol = solve(&p, None)?;
        let dev = sol.field.max_abs_diff(&oracle.field);
        println!("{:>8} passes {:<6} max deviation {dev:.3e}", m.name(), sol.report.passes);
        let _ = writeln!(csv, "{},{},{}", m, sol.report.passes, io::fmt_float(dev));
        statuses.push(sol.report.status);
    }
    ctx.write("oracle_check.csv", &csv)?;
    Ok(Outcome::from_statuses(statuses))
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let ctx = Ctx::new(&cli.common)?;
    match &cli.command {
        Command::Solve { rho, eps, emit_phi } => cmd_solve(&ctx, rho.as_deref(), eps.as_deref(), *emit_phi),
        Command::Study { methods, ns } => cmd_study(&ctx, methods, ns),
        Command::Profile { methods, checkpoints, section_y } => cmd_profile(&ctx, methods, checkpoints, *section_y),
        Command::Timeseries { methods, steps, compare_cold } => cmd_timeseries(&ctx, methods, *steps, *compare_cold),
        Command::OracleCheck { methods } => cmd_oracle_check(&ctx, methods),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("curlfree").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn config_parses_and_rejects_unknown_keys() {
        let text = r#"
[grid]
dim = 2
cells = [8, 8]
extent = [4.0, 4.0]

[problem]
case = "eq27"
N = 16

[solver]
method = "forward"
tol = 1e-9

[output]
timings = false
"#;
        let cfg = RunConfig::parse(text, Path::new("run.toml")).unwrap();
        assert_eq!(cfg.problem.n, Some(16));
        assert_eq!(cfg.solver.method.as_deref(), Some("forward"));
        let err = RunConfig::parse("[solver]\ntolerance = 1.0\n", Path::new("bad.toml")).unwrap_err();
        assert!(format!("{err:#}").contains("tolerance"));
        assert!(RunConfig::parse("[mystery]\n", Path::new("bad.toml")).is_err());
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[solver]\nmethod = \"forward\"\ntol = 1e-9\nmax_passes = 7\n").unwrap();
        let cli = parse(&["--config", path.to_str().unwrap(), "--method", "single", "solve"]);
        let ctx = Ctx::new(&cli.common).unwrap();
        assert_eq!(ctx.method, RelaxMethod::SingleMesh);
        assert_eq!(ctx.tol, Some(1e-9));
        assert_eq!(ctx.max_passes, 7);
    }

    #[test]
    fn list_flags_and_globals() {
        let cli = parse(&["study", "--methods", "single,zigzag", "--Ns", "8,16", "--case", "eq27_3d"]);
        match &cli.command {
            Command::Study { methods, ns } => {
                assert_eq!(methods.as_deref(), Some(&["single".to_string(), "zigzag".to_string()][..]));
                assert_eq!(ns.as_deref(), Some(&[8usize, 16][..]));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(cli.common.case.as_deref(), Some("eq27_3d"));
        let cli = parse(&["oracle-check", "--N", "16", "--tol", "1e-10"]);
        assert_eq!(cli.common.n, Some(16));
        assert_eq!(cli.common.tol, Some(1e-10));
    }

    #[test]
    fn bad_values_are_errors() {
        assert!(Ctx::new(&parse(&["--method", "sor", "solve"]).common).is_err());
        assert!(Ctx::new(&parse(&["--case", "eq99", "solve"]).common).is_err());
        assert!(Ctx::new(&parse(&["--tol=-1", "solve"]).common).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Outcome::Converged.exit_code(), 0);
        assert_eq!(Outcome::MaxPassesReached.exit_code(), 2);
        assert_eq!(
            Outcome::from_statuses([SolveStatus::Converged, SolveStatus::MaxPassesReached]),
            Outcome::MaxPassesReached
        );
    }
}
