//! Manufactured-solution studies, curl profiles and the time-series benchmark.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{average_node, discrete_curl, edge_coeff, EdgeCoeff, GridSpec, NodeField, StaggeredField};
use crate::oracle::spectral_solve;
use crate::relax::{relax_pass, RelaxMethod, Schedule};
use crate::solver::{gauss_residual, init_field, solve, warm_start, Problem, SolveStatus};

/// Energy-drop tolerance used by the convergence study.
pub const STUDY_TOL: f64 = 1e-16;
/// Side length of every benchmark domain.
pub const DOMAIN_LENGTH: f64 = 4.0;
/// Number of Fourier modes in each charge increment.
pub const MODES: usize = 16;

/// The manufactured solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseKind {
    /// `φ = cos(πx/2) sin(πy/2)`, `ε = 2 + cos(πx/2) cos(πy/2)` on `(0,4)²`.
    Trig2d,
    /// `φ = cos(πx/2) sin(πy/2) cos(πz/2)`, `ε = 2 + cos(πx/2) cos(πy/2) cos(πz/2)` on `(0,4)³`.
    Trig3d,
}

impl CaseKind {
    pub fn name(self) -> &'static str {
        match self {
            CaseKind::Trig2d => "eq27",
            CaseKind::Trig3d => "eq27_3d",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            CaseKind::Trig2d => 2,
            CaseKind::Trig3d => 3,
        }
    }
}

impl fmt::Display for CaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CaseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eq27" => Ok(CaseKind::Trig2d),
            "eq27_3d" => Ok(CaseKind::Trig3d),
            other => Err(Error::Config(format!("unknown manufactured case '{other}'"))),
        }
    }
}

/// How a closed-form permittivity is placed on the edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EpsSampling {
    /// Exact values at the edge midpoints.
    #[default]
    Edge,
    /// Node values averaged onto the edges.
    NodeAverage,
}

impl EpsSampling {
    pub fn name(self) -> &'static str {
        match self {
            EpsSampling::Edge => "edge",
            EpsSampling::NodeAverage => "average",
        }
    }
}

impl FromStr for EpsSampling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edge" => Ok(EpsSampling::Edge),
            "average" => Ok(EpsSampling::NodeAverage),
            other => Err(Error::Config(format!("unknown permittivity sampling '{other}' (expected edge or average)"))),
        }
    }
}

/// A closed-form potential and permittivity with the matching charge density.
#[derive(Debug, Clone)]
pub struct ManufacturedCase {
    kind: CaseKind,
    spec: GridSpec,
    sampling: EpsSampling,
}

impl ManufacturedCase {
    pub fn new(kind: CaseKind, n: usize) -> Result<Self> {
        Ok(Self { kind, spec: GridSpec::cube(kind.dim(), n, DOMAIN_LENGTH)?, sampling: EpsSampling::default() })
    }

    pub fn with_sampling(mut self, sampling: EpsSampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn sampling(&self) -> EpsSampling {
        self.sampling
    }

    pub fn kind(&self) -> CaseKind {
        self.kind
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    fn trig(x: [f64; 3]) -> ([f64; 3], [f64; 3]) {
        let c = x.map(|v| (FRAC_PI_2 * v).cos());
        let s = x.map(|v| (FRAC_PI_2 * v).sin());
        (c, s)
    }

    fn z_factor(&self, c: f64) -> f64 {
        if self.kind == CaseKind::Trig2d {
            1.0
        } else {
            c
        }
    }

    pub fn phi_exact(&self, x: [f64; 3]) -> f64 {
        let (c, s) = Self::trig(x);
        c[0] * s[1] * self.z_factor(c[2])
    }

    pub fn eps_exact(&self, x: [f64; 3]) -> f64 {
        let (c, _) = Self::trig(x);
        2.0 + c[0] * c[1] * self.z_factor(c[2])
    }

    /// `−∂φ/∂x_axis`.
    pub fn e_exact(&self, axis: usize, x: [f64; 3]) -> f64 {
        let (c, s) = Self::trig(x);
        let cz = self.z_factor(c[2]);
        let d = match axis {
            0 => -s[0] * s[1] * cz,
            1 => c[0] * c[1] * cz,
            _ => -c[0] * s[1] * s[2],
        };
        -FRAC_PI_2 * d
    }

    /// `−∇·(ε∇φ)`.
    pub fn rho_exact(&self, x: [f64; 3]) -> f64 {
        let (c, s) = Self::trig(x);
        let a2 = FRAC_PI_2 * FRAC_PI_2;
        let eps = self.eps_exact(x);
        let phi = self.phi_exact(x);
        match self.kind {
            CaseKind::Trig2d => 2.0 * a2 * eps * phi + a2 * s[1] * c[1] * (2.0 * FRAC_PI_2 * x[0]).cos(),
            CaseKind::Trig3d => {
                let (cx2, sx2, cz2, sz2) = (c[0] * c[0], s[0] * s[0], c[2] * c[2], s[2] * s[2]);
                3.0 * a2 * eps * phi + a2 * c[1] * s[1] * (cx2 * cz2 - sx2 * cz2 - cx2 * sz2)
            }
        }
    }

    pub fn eps_nodes(&self) -> NodeField {
        NodeField::from_fn(&self.spec, |x| self.eps_exact(x))
    }

    /// Node samples of the charge density, centred to remove round-off drift.
    pub fn rho(&self) -> Result<NodeField> {
        let mut rho = NodeField::from_fn(&self.spec, |x| self.rho_exact(x));
        let mean = average_node(&rho);
        let tol = 1e-12 * rho.max_abs().max(1.0);
        if mean.abs() > tol {
            return Err(Error::NonZeroMean { mean, tol });
        }
        rho.shift(-mean);
        Ok(rho)
    }

    /// Edge permittivity according to the sampling mode.
    pub fn eps_edges(&self) -> Result<EdgeCoeff> {
        match self.sampling {
            EpsSampling::Edge => EdgeCoeff::sample(&self.spec, |_, x| self.eps_exact(x)),
            EpsSampling::NodeAverage => edge_coeff(&self.eps_nodes()),
        }
    }

    pub fn problem(&self) -> Result<Problem> {
        Problem::with_edge_eps(self.rho()?, self.eps_edges()?)
    }

    pub fn e_exact_field(&self) -> StaggeredField {
        StaggeredField::from_fn(&self.spec, |axis, x| self.e_exact(axis, x))
    }

    /// Largest deviation at the nodes, each component averaged from its two
    /// neighbouring edges and compared with the exact field there.
    pub fn error_inf(&self, e: &StaggeredField) -> f64 {
        let spec = &self.spec;
        let mut worst = 0.0f64;
        for a in 0..spec.dim() {
            let comp = e.comp(a);
            for n in 0..spec.len() {
                let c = spec.coords(n);
                let avg = 0.5 * (comp[n] + comp[spec.bwd(n, c[a], a)]);
                worst = worst.max((avg - self.e_exact(a, spec.node_position(c))).abs());
            }
        }
        worst
    }

    /// Largest deviation from the exact field at the staggered points.
    pub fn staggered_error_inf(&self, e: &StaggeredField) -> f64 {
        e.max_abs_diff(&self.e_exact_field())
    }

    /// Largest deviation of a mean-zero potential from the exact one.
    pub fn phi_error_inf(&self, phi: &NodeField) -> f64 {
        let exact = NodeField::from_fn(&self.spec, |x| self.phi_exact(x));
        let shift = average_node(&exact);
        phi.values()
            .iter()
            .zip(exact.values())
            .fold(0.0, |m, (a, b)| m.max((a - (b - shift)).abs()))
    }
}

/// Runs `f` once, or with one discarded warm-up followed by three timed
/// repeats when `enabled`; returns the last result and the median time in ms.
pub fn timed<T>(enabled: bool, mut f: impl FnMut() -> Result<T>) -> Result<(T, f64)> {
    if !enabled {
        return Ok((f()?, 0.0));
    }
    f()?;
    let mut times = Vec::with_capacity(3);
    let mut last = None;
    for _ in 0..3 {
        let t = Instant::now();
        last = Some(f()?);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    Ok((last.expect("three repeats ran"), times[1]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyOptions {
    pub tol: f64,
    pub max_passes: usize,
    pub timings: bool,
    pub sampling: EpsSampling,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            tol: STUDY_TOL,
            max_passes: crate::solver::DEFAULT_MAX_PASSES,
            timings: false,
            sampling: EpsSampling::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub n: usize,
    pub method: RelaxMethod,
    pub error_inf: f64,
    pub order: Option<f64>,
    pub passes: usize,
    pub wall_time_ms: f64,
    pub status: SolveStatus,
}

/// Solves the manufactured case at every resolution with every method.
///
/// Rows are grouped by method in the given order; `order` is
/// `log₂(error(N_prev)/error(N))` against the previous resolution of the same
/// method when the two differ by a factor of two.
pub fn run_convergence_study(
    kind: CaseKind,
    ns: &[usize],
    methods: &[RelaxMethod],
    opts: StudyOptions,
) -> Result<Vec<StudyRow>> {
    let mut rows = Vec::new();
    for &method in methods {
        let mut prev: Option<(usize, f64)> = None;
        for &n in ns {
            let case = ManufacturedCase::new(kind, n)?.with_sampling(opts.sampling);
            let problem = case.problem()?.with_method(method).with_tol(opts.tol).with_max_passes(opts.max_passes);
            let (sol, wall) = timed(opts.timings, || solve(&problem, None))?;
            if sol.report.status == SolveStatus::MaxPassesReached {
                warn!("{method} at N={n} stopped at the pass limit");
            }
            let error_inf = case.error_inf(&sol.field);
            let order = prev.filter(|&(pn, _)| pn * 2 == n).map(|(_, pe)| (pe / error_inf).log2());
            info!("{kind} {method} N={n}: error {error_inf:.6e}, {} passes", sol.report.passes);
            rows.push(StudyRow {
                n,
                method,
                error_inf,
                order,
                passes: sol.report.passes,
                wall_time_ms: wall,
                status: sol.report.status,
            });
            prev = Some((n, error_inf));
        }
    }
    Ok(rows)
}

/// Least-squares slope of `−log error` against `log N`.
pub fn fitted_order(rows: &[StudyRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| ((r.n as f64).ln(), r.error_inf.ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    -sxy / sxx
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub method: RelaxMethod,
    pub pass: usize,
    pub x: f64,
    pub curl: f64,
}

/// Index of the face row whose centre `(j+½)h` is nearest to `y`; ties go to
/// the lower row.
pub fn section_row(spec: &GridSpec, y: f64) -> usize {
    let t = y / spec.spacing()[1] - 0.5;
    let j = (t - 0.5).ceil() as isize;
    j.rem_euclid(spec.cells()[1] as isize) as usize
}

/// The xy-curl along the face row nearest to `y` (bottom layer in 3D).
pub fn curl_section(e: &StaggeredField, y: f64) -> Vec<(f64, f64)> {
    let spec = e.spec();
    let j = section_row(spec, y);
    let curl = discrete_curl(e);
    let plane = curl.plane((0, 1)).expect("xy plane always present");
    let h = spec.spacing()[0];
    (0..spec.cells()[0]).map(|i| ((i as f64 + 0.5) * h, plane[spec.index([i, j, 0])])).collect()
}

/// Curl profiles at the given pass counts, starting from the shared initial field.
pub fn residual_profile(
    problem: &Problem,
    methods: &[RelaxMethod],
    checkpoints: &[usize],
    y: f64,
) -> Result<Vec<ProfileRow>> {
    let mut checkpoints = checkpoints.to_vec();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let mut rows = Vec::new();
    for &method in methods {
        let schedule = Schedule::new(problem.spec(), method)?;
        let mut e = init_field(problem)?;
        let mut pass = 0;
        for &cp in &checkpoints {
            while pass < cp {
                relax_pass(&mut e, problem.eps(), &schedule);
                pass += 1;
            }
            rows.extend(curl_section(&e, y).into_iter().map(|(x, curl)| ProfileRow { method, pass, x, curl }));
        }
    }
    Ok(rows)
}

/// Magnitude of the `k`-th discrete Fourier coefficient of a periodic series.
pub fn fourier_amplitude(values: &[f64], k: usize) -> f64 {
    let n = values.len() as f64;
    let (re, im) = values.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, v)| {
        let th = 2.0 * std::f64::consts::PI * (k * t) as f64 / n;
        (re + v * th.cos(), im - v * th.sin())
    });
    re.hypot(im) / n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Permittivity {
    /// `ε ≡ 1`.
    Homogeneous,
    /// `ε = 2 + cos(πx/2) cos(πy/2)`.
    Inhomogeneous,
}

impl Permittivity {
    pub fn nodes(self, spec: &GridSpec) -> NodeField {
        match self {
            Permittivity::Homogeneous => NodeField::constant(spec, 1.0),
            Permittivity::Inhomogeneous => {
                NodeField::from_fn(spec, |x| 2.0 + (FRAC_PI_2 * x[0]).cos() * (FRAC_PI_2 * x[1]).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesSpec {
    pub n: usize,
    pub steps: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_passes: usize,
    pub permittivity: Permittivity,
    /// Forces every coefficient to zero.
    pub zero_coefficients: bool,
    /// Also solve every step from a cold start and record its pass count.
    pub compare_cold: bool,
    pub timings: bool,
}

impl TimeSeriesSpec {
    pub fn new(n: usize, steps: usize, seed: u64) -> Self {
        Self {
            n,
            steps,
            seed,
            tol: crate::solver::DEFAULT_TOL,
            max_passes: crate::solver::DEFAULT_MAX_PASSES,
            permittivity: Permittivity::Homogeneous,
            zero_coefficients: false,
            compare_cold: false,
            timings: false,
        }
    }

    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::cube(2, self.n, DOMAIN_LENGTH)
    }
}

/// Coefficients `(a_1..a_16, b_1..b_16)` for one step.
///
/// Each step draws from its own stream of a ChaCha8 generator seeded with
/// `seed`, `a` first then `b`, each uniform on the open interval (0, 1).
pub fn step_coefficients(seed: u64, step: u64) -> ([f64; MODES], [f64; MODES]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    let mut a = [0.0; MODES];
    let mut b = [0.0; MODES];
    for v in a.iter_mut().chain(b.iter_mut()) {
        *v = rng.sample(rand::distributions::Open01);
    }
    (a, b)
}

/// The charge added at `step`, mean-centred on the grid.
pub fn charge_increment(spec: &GridSpec, a: &[f64; MODES], b: &[f64; MODES]) -> NodeField {
    let m = 64.0 * (a.iter().sum::<f64>() + b.iter().sum::<f64>());
    if m == 0.0 {
        return NodeField::zeros(spec);
    }
    let mut inc = NodeField::from_fn(spec, |x| {
        (1..=MODES)
            .map(|k| {
                let w = k as f64 * FRAC_PI_2;
                a[k - 1] * (w * x[0]).cos() * (w * x[1]).sin() + b[k - 1] * (w * x[0]).sin() * (w * x[1]).cos()
            })
            .sum::<f64>()
            / m
    });
    let mean = average_node(&inc);
    inc.shift(-mean);
    inc
}

/// The charge densities `ρ⁽¹⁾ … ρ⁽ˢᵗᵉᵖˢ⁾`.
pub fn charge_sequence(tss: &TimeSeriesSpec) -> Result<Vec<NodeField>> {
    let spec = tss.spec()?;
    let mut rho = NodeField::zeros(&spec);
    let mut out = Vec::with_capacity(tss.steps);
    for step in 0..tss.steps {
        let (a, b) = if tss.zero_coefficients {
            ([0.0; MODES], [0.0; MODES])
        } else {
            step_coefficients(tss.seed, step as u64)
        };
        let inc = charge_increment(&spec, &a, &b);
        rho = NodeField::from_values(&spec, rho.values().iter().zip(inc.values()).map(|(r, d)| r + d).collect())?;
        out.push(rho.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub method: RelaxMethod,
    pub passes: usize,
    pub wall_time_ms: f64,
    pub gauss_residual: f64,
    pub energy_drop: f64,
    pub edge_touches: u64,
    pub updates: u64,
    pub cold_passes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesReport {
    pub method: RelaxMethod,
    pub n: usize,
    pub steps: Vec<StepRecord>,
    /// Median per-step time of the constant-permittivity spectral solve.
    pub spectral_mean_ms: Option<f64>,
}

impl TimeSeriesReport {
    fn mean(&self, f: impl Fn(&StepRecord) -> f64) -> f64 {
        self.steps.iter().map(f).sum::<f64>() / self.steps.len().max(1) as f64
    }
    pub fn mean_passes(&self) -> f64 {
        self.mean(|s| s.passes as f64)
    }
    pub fn mean_wall_ms(&self) -> f64 {
        self.mean(|s| s.wall_time_ms)
    }
    pub fn mean_edge_touches(&self) -> f64 {
        self.mean(|s| s.edge_touches as f64)
    }
    pub fn mean_updates(&self) -> f64 {
        self.mean(|s| s.updates as f64)
    }
    pub fn mean_cold_passes(&self) -> Option<f64> {
        let cold: Option<Vec<usize>> = self.steps.iter().map(|s| s.cold_passes).collect();
        cold.map(|c| c.iter().sum::<usize>() as f64 / c.len().max(1) as f64)
    }
}

/// Solves the charge sequence with warm starts between steps.
pub fn run_time_series(tss: &TimeSeriesSpec, method: RelaxMethod) -> Result<TimeSeriesReport> {
    let spec = tss.spec()?;
    let eps_nodes = tss.permittivity.nodes(&spec);
    let base = Problem::new(NodeField::zeros(&spec), eps_nodes)?
        .with_method(method)
        .with_tol(tss.tol)
        .with_max_passes(tss.max_passes);
    let mut field = StaggeredField::zeros(&spec);
    let mut steps = Vec::with_capacity(tss.steps);
    let mut spectral_times = Vec::new();
    for (idx, rho) in charge_sequence(tss)?.into_iter().enumerate() {
        let problem = base.with_rho(rho)?;
        let (sol, wall) = timed(tss.timings, || solve(&problem, Some(warm_start(&field, &problem)?)))?;
        if sol.report.status == SolveStatus::MaxPassesReached {
            warn!("step {} stopped at the pass limit", idx + 1);
        }
        let cold_passes = if tss.compare_cold { Some(solve(&problem, None)?.report.passes) } else { None };
        if tss.timings && tss.permittivity == Permittivity::Homogeneous {
            spectral_times.push(timed(true, || spectral_solve(problem.rho(), 1.0))?.1);
        }
        steps.push(StepRecord {
            step: idx + 1,
            method,
            passes: sol.report.passes,
            wall_time_ms: wall,
            gauss_residual: gauss_residual(&sol.field, problem.eps(), problem.rho())?,
            energy_drop: sol.report.work.energy_drop,
            edge_touches: sol.report.work.edge_touches(),
            updates: sol.report.work.updates_applied,
            cold_passes,
        });
        field = sol.field;
    }
    let spectral_mean_ms = if spectral_times.is_empty() {
        None
    } else {
        Some(spectral_times.iter().sum::<f64>() / spectral_times.len() as f64)
    };
    Ok(TimeSeriesReport { method, n: tss.n, steps, spectral_mean_ms })
}
