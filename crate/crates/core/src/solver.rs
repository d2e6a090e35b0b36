//! Problem assembly and the outer relaxation loop.

use std::time::Instant;

use log::debug;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{
    average_node, average_staggered, discrete_curl, discrete_div, edge_coeff, energy, EdgeCoeff, GridSpec, NodeField,
    StaggeredField,
};
use crate::relax::{relax_pass_compensated, RelaxMethod, Residue, Schedule, SweepTrace};

/// Default per-pass energy-drop tolerance.
pub const DEFAULT_TOL: f64 = 1e-7;
/// Stricter tolerance profile.
pub const STRICT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_PASSES: usize = 100_000;

/// Relative tolerance on the node-wise Gauss residual.
pub const GAUSS_REL_TOL: f64 = 1e-12;
/// Relative tolerance on the mean of the charge density.
pub const MEAN_REL_TOL: f64 = 1e-12;

/// `1e-12 · max(1, max|ρ|)`.
pub fn gauss_tolerance(rho: &NodeField) -> f64 {
    GAUSS_REL_TOL * rho.max_abs().max(1.0)
}

/// Which per-pass quantity ends the iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Stop once the pass energy drop falls below the problem tolerance.
    EnergyDrop,
    /// Stop once the largest applied flux is at most the given value.
    FluxMax(f64),
    /// Stop once the largest face curl is at most the given value.
    CurlResidual(f64),
}

/// Poisson problem on a periodic grid.
#[derive(Debug, Clone)]
pub struct Problem {
    spec: GridSpec,
    rho: NodeField,
    eps: EdgeCoeff,
    method: RelaxMethod,
    tol: f64,
    max_passes: usize,
    stop: StopRule,
    rho_shift: f64,
}

impl Problem {
    /// Builds a problem, rejecting charge densities whose mean is not zero.
    pub fn new(rho: NodeField, eps_nodes: NodeField) -> Result<Self> {
        Self::build(rho, edge_coeff(&eps_nodes)?, false)
    }

    /// Builds a problem after subtracting the mean of `rho`; the removed
    /// amount is available from [`Problem::rho_shift`].
    pub fn centered(rho: NodeField, eps_nodes: NodeField) -> Result<Self> {
        Self::build(rho, edge_coeff(&eps_nodes)?, true)
    }

    /// Like [`Problem::new`] with the permittivity given directly at the edges.
    pub fn with_edge_eps(rho: NodeField, eps: EdgeCoeff) -> Result<Self> {
        Self::build(rho, eps, false)
    }

    /// Like [`Problem::centered`] with the permittivity given directly at the edges.
    pub fn centered_with_edge_eps(rho: NodeField, eps: EdgeCoeff) -> Result<Self> {
        Self::build(rho, eps, true)
    }

    fn build(mut rho: NodeField, eps: EdgeCoeff, center: bool) -> Result<Self> {
        rho.spec().check_same(eps.spec(), "charge density", "permittivity")?;
        let spec = rho.spec().clone();
        let mean = average_node(&rho);
        let mut rho_shift = 0.0;
        if center {
            rho.shift(-mean);
            rho_shift = mean;
        } else {
            let tol = MEAN_REL_TOL * rho.max_abs().max(1.0);
            if mean.abs() > tol {
                return Err(Error::NonZeroMean { mean, tol });
            }
        }
        Ok(Self {
            spec,
            rho,
            eps,
            method: RelaxMethod::ZigzagHlr,
            tol: DEFAULT_TOL,
            max_passes: DEFAULT_MAX_PASSES,
            stop: StopRule::EnergyDrop,
            rho_shift,
        })
    }

    pub fn with_method(mut self, method: RelaxMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_passes(mut self, max_passes: usize) -> Self {
        self.max_passes = max_passes;
        self
    }

    pub fn with_stop_rule(mut self, stop: StopRule) -> Self {
        self.stop = stop;
        self
    }

    /// Same grid and permittivity with a new charge density.
    pub fn with_rho(&self, rho: NodeField) -> Result<Self> {
        let mut p = Problem::with_edge_eps(rho, self.eps.clone())?;
        p.method = self.method;
        p.tol = self.tol;
        p.max_passes = self.max_passes;
        p.stop = self.stop;
        Ok(p)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }
    pub fn rho(&self) -> &NodeField {
        &self.rho
    }
    pub fn eps(&self) -> &EdgeCoeff {
        &self.eps
    }
    pub fn method(&self) -> RelaxMethod {
        self.method
    }
    pub fn tol(&self) -> f64 {
        self.tol
    }
    pub fn max_passes(&self) -> usize {
        self.max_passes
    }
    pub fn stop_rule(&self) -> StopRule {
        self.stop
    }
    pub fn rho_shift(&self) -> f64 {
        self.rho_shift
    }

    pub fn gauss_tolerance(&self) -> f64 {
        gauss_tolerance(&self.rho)
    }

    fn validate(&self) -> Result<()> {
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_passes < 1 {
            return Err(Error::Config("max_passes must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxPassesReached,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub passes: usize,
    /// Energy after each pass.
    pub energy_history: Vec<f64>,
    pub gauss_residual: f64,
    pub curl_residual: f64,
    pub avg_field: Vec<f64>,
    pub wall_time_ms: f64,
    pub error_inf: Option<f64>,
    #[serde(skip)]
    pub status: SolveStatus,
    #[serde(skip)]
    pub work: SweepTrace,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub field: StaggeredField,
    pub report: SolveReport,
}

/// Snapshot handed to pass observers.
pub struct PassInfo<'a> {
    pub pass: usize,
    pub field: &'a StaggeredField,
    pub trace: &'a SweepTrace,
    pub energy: f64,
}

/// Gauss-consistent starting field for `rho` by cascading sweeps.
///
/// Axes are processed from last to first. For each axis, the residual charge
/// is averaged over all lower axes, that average is integrated along the axis
/// starting from a zero flux at index 0, and it is then removed from the
/// residual. In 2D this is a y-sweep with row averages followed by an x-sweep
/// with the remainder.
pub fn init_from_rho(rho: &NodeField, eps: &EdgeCoeff) -> Result<StaggeredField> {
    rho.spec().check_same(eps.spec(), "charge density", "permittivity")?;
    let spec = rho.spec();
    let cells = spec.cells();
    let strides = spec.strides();
    let mut residual = rho.values().to_vec();
    let mut e = StaggeredField::zeros(spec);

    for axis in (0..spec.dim()).rev() {
        // Size of the block of lower axes averaged together.
        let lower: usize = cells[..axis].iter().product();
        let upper: usize = cells[axis + 1..].iter().product();
        let n_axis = cells[axis];
        let h = spec.h(axis);
        let inv = eps.inv(axis);

        for u in 0..upper {
            let base = u * strides[axis] * n_axis;
            let avg: Vec<f64> = (0..n_axis)
                .map(|t| {
                    let off = base + t * strides[axis];
                    residual[off..off + lower].iter().sum::<f64>() / lower as f64
                })
                .collect();
            let comp = e.comp_mut(axis);
            for l in 0..lower {
                let mut flux = 0.0;
                comp[base + l] = 0.0;
                for (t, &r) in avg.iter().enumerate().skip(1) {
                    flux += h * r;
                    let n = base + t * strides[axis] + l;
                    comp[n] = flux * inv[n];
                }
            }
            for (t, &r) in avg.iter().enumerate() {
                let off = base + t * strides[axis];
                residual[off..off + lower].iter_mut().for_each(|v| *v -= r);
            }
        }
    }
    Ok(e)
}

/// Starting field for `problem` that satisfies the discrete Gauss law.
pub fn init_field(problem: &Problem) -> Result<StaggeredField> {
    init_from_rho(&problem.rho, &problem.eps)
}

/// Reuses a previous solution for a new charge density: adds the
/// initialisation of the charge increment `ρ_new − ∇_h·(εE_prev)`.
pub fn warm_start(e_prev: &StaggeredField, problem: &Problem) -> Result<StaggeredField> {
    e_prev.spec().check_same(problem.spec(), "previous field", "problem")?;
    let current = discrete_div(e_prev, &problem.eps)?;
    let delta = problem.rho.sub(&current)?;
    let mut e = e_prev.clone();
    e.axpy(1.0, &init_from_rho(&delta, &problem.eps)?);
    Ok(e)
}

/// Node-wise maximum of `|∇_h·(εE) − ρ|`.
pub fn gauss_residual(e: &StaggeredField, eps: &EdgeCoeff, rho: &NodeField) -> Result<f64> {
    let d = discrete_div(e, eps)?;
    Ok(d.values().iter().zip(rho.values()).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub energy: f64,
    pub gauss_residual: f64,
    pub curl_residual: f64,
    pub avg_field: Vec<f64>,
}

pub fn diagnostics(e: &StaggeredField, problem: &Problem) -> Result<Diagnostics> {
    Ok(Diagnostics {
        energy: energy(e, &problem.eps),
        gauss_residual: gauss_residual(e, &problem.eps, &problem.rho)?,
        curl_residual: discrete_curl(e).max_abs(),
        avg_field: average_staggered(e),
    })
}

pub fn solve(problem: &Problem, start: Option<StaggeredField>) -> Result<Solution> {
    solve_observed(problem, start, |_| {})
}

/// Runs passes until the stop rule fires or `max_passes` is reached; the
/// observer sees the field after every pass.
pub fn solve_observed(
    problem: &Problem,
    start: Option<StaggeredField>,
    mut observer: impl FnMut(&PassInfo<'_>),
) -> Result<Solution> {
    problem.validate()?;
    let clock = Instant::now();
    let schedule = Schedule::new(problem.spec(), problem.method)?;
    let mut field = match start {
        Some(e) => {
            e.spec().check_same(problem.spec(), "start field", "problem")?;
            let residual = gauss_residual(&e, &problem.eps, &problem.rho)?;
            let tol = problem.gauss_tolerance();
            if residual > tol {
                return Err(Error::GaussViolation { residual, tol });
            }
            e
        }
        None => init_field(problem)?,
    };

    let mut history = Vec::new();
    let mut work = SweepTrace::default();
    let mut status = SolveStatus::MaxPassesReached;
    let mut residue = Residue::new(problem.spec());
    for pass in 1..=problem.max_passes {
        let trace = relax_pass_compensated(&mut field, &mut residue, &problem.eps, &schedule);
        let en = energy(&field, &problem.eps);
        history.push(en);
        work.updates_applied += trace.updates_applied;
        work.loop_edge_touches += trace.loop_edge_touches;
        work.line_edge_touches += trace.line_edge_touches;
        work.flux_max = trace.flux_max;
        work.energy_drop += trace.energy_drop;
        observer(&PassInfo { pass, field: &field, trace: &trace, energy: en });
        let done = match problem.stop {
            StopRule::EnergyDrop => trace.energy_drop < problem.tol,
            StopRule::FluxMax(t) => trace.flux_max <= t,
            StopRule::CurlResidual(t) => discrete_curl(&field).max_abs() <= t,
        };
        if done {
            status = SolveStatus::Converged;
            break;
        }
    }
    let diag = diagnostics(&field, problem)?;
    let report = SolveReport {
        passes: history.len(),
        energy_history: history,
        gauss_residual: diag.gauss_residual,
        curl_residual: diag.curl_residual,
        avg_field: diag.avg_field,
        wall_time_ms: clock.elapsed().as_secs_f64() * 1e3,
        error_inf: None,
        status,
        work,
    };
    debug!(
        "{} solve on {:?}: {} passes, {:?}",
        problem.method,
        problem.spec().cells(),
        report.passes,
        report.status
    );
    Ok(Solution { field, report })
}

/// Relative curl threshold for path-independent integration.
pub const RECOVER_CURL_REL_TOL: f64 = 1e-8;

/// Integrates `E = −∇_h φ` back to a mean-zero potential.
///
/// Walks along x on the first row, then along y for every column (and along z
/// in 3D), then removes the mean.
pub fn recover_potential(e: &StaggeredField) -> Result<NodeField> {
    let spec = e.spec();
    let scale = e.max_abs();
    let curl = discrete_curl(e).max_abs();
    let tol = RECOVER_CURL_REL_TOL * scale;
    if curl > tol {
        return Err(Error::CurlTooLarge { curl, tol });
    }
    let mean = average_staggered(e);
    if mean.iter().any(|m| m.abs() > tol.max(f64::MIN_POSITIVE)) {
        return Err(Error::CurlTooLarge { curl: mean.iter().fold(0.0, |m, v| m.max(v.abs())), tol });
    }
    let mut phi = NodeField::zeros(spec);
    let v = phi.values_mut();
    let cells = spec.cells();
    let nz = if spec.dim() == 3 { cells[2] } else { 1 };
    for k in 0..nz {
        if k > 0 {
            let n = spec.index([0, 0, k]);
            let m = spec.index([0, 0, k - 1]);
            v[n] = v[m] - spec.h(2) * e.comp(2)[m];
        }
        for i in 1..cells[0] {
            let n = spec.index([i, 0, k]);
            let m = spec.index([i - 1, 0, k]);
            v[n] = v[m] - spec.h(0) * e.comp(0)[m];
        }
        for i in 0..cells[0] {
            for j in 1..cells[1] {
                let n = spec.index([i, j, k]);
                let m = spec.index([i, j - 1, k]);
                v[n] = v[m] - spec.h(1) * e.comp(1)[m];
            }
        }
    }
    let mean = average_node(&phi);
    phi.shift(-mean);
    Ok(phi)
}
