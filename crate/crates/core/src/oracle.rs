//! Reference solvers for the potential formulation `−∇_h·(ε∇_h φ) = ρ`.

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::grid::{neg_gradient, EdgeCoeff, GridSpec, NodeField, StaggeredField};
use crate::solver::Problem;

/// Largest system `direct_solve` accepts.
pub const MAX_DIRECT_UNKNOWNS: usize = 200_000;
/// Systems below this size are factorised densely.
pub const DENSE_LIMIT: usize = 4096;
/// Relative residual target of the iterative path.
pub const CG_REL_TOL: f64 = 1e-13;

/// Matrix-free view of the variable-coefficient node operator.
#[derive(Debug, Clone, Copy)]
pub struct LinearSystemView<'a> {
    eps: &'a EdgeCoeff,
}

impl<'a> LinearSystemView<'a> {
    pub fn new(eps: &'a EdgeCoeff) -> Self {
        Self { eps }
    }

    pub fn spec(&self) -> &GridSpec {
        self.eps.spec()
    }

    pub fn dimension(&self) -> usize {
        self.spec().len()
    }

    /// `out = −∇_h·(ε∇_h u)`.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let spec = self.spec();
        out.iter_mut().for_each(|v| *v = 0.0);
        for axis in 0..spec.dim() {
            let h2 = spec.h(axis) * spec.h(axis);
            let eps = self.eps.comp(axis);
            for n in 0..spec.len() {
                let c = spec.coords(n);
                let f = spec.fwd(n, c[axis], axis);
                // Flux through the edge between n and its forward neighbour.
                let flux = eps[n] * (u[f] - u[n]) / h2;
                out[n] -= flux;
                out[f] += flux;
            }
        }
    }

    fn diagonal_mean(&self) -> f64 {
        let spec = self.spec();
        let total: f64 = (0..spec.dim())
            .map(|a| 2.0 * self.eps.comp(a).iter().sum::<f64>() / (spec.h(a) * spec.h(a)))
            .sum();
        total / spec.len() as f64
    }

    fn dense(&self) -> DMatrix<f64> {
        let n = self.dimension();
        let mut m = DMatrix::zeros(n, n);
        let spec = self.spec();
        for axis in 0..spec.dim() {
            let h2 = spec.h(axis) * spec.h(axis);
            let eps = self.eps.comp(axis);
            for p in 0..n {
                let f = spec.fwd(p, spec.coords(p)[axis], axis);
                let w = eps[p] / h2;
                m[(p, p)] += w;
                m[(f, f)] += w;
                m[(p, f)] -= w;
                m[(f, p)] -= w;
            }
        }
        m
    }
}

/// Oracle output: mean-zero potential and its negative discrete gradient.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub phi: NodeField,
    pub field: StaggeredField,
}

fn finish(spec: &GridSpec, mut phi: Vec<f64>) -> Result<OracleSolution> {
    let mean = phi.iter().sum::<f64>() / phi.len() as f64;
    phi.iter_mut().for_each(|v| *v -= mean);
    let phi = NodeField::from_values(spec, phi)?;
    let field = neg_gradient(&phi);
    Ok(OracleSolution { phi, field })
}

/// Solves for the potential of `problem` directly.
pub fn direct_solve(problem: &Problem) -> Result<OracleSolution> {
    direct_solve_rho(problem.rho(), problem.eps())
}

pub fn direct_solve_rho(rho: &NodeField, eps: &EdgeCoeff) -> Result<OracleSolution> {
    rho.spec().check_same(eps.spec(), "charge density", "permittivity")?;
    let spec = rho.spec();
    let n = spec.len();
    if n > MAX_DIRECT_UNKNOWNS {
        return Err(Error::Oracle(format!("{n} unknowns exceed the direct-solve limit of {MAX_DIRECT_UNKNOWNS}")));
    }
    let op = LinearSystemView::new(eps);
    if n < DENSE_LIMIT {
        // Pin the constant null space with a rank-one shift.
        let alpha = op.diagonal_mean() / n as f64;
        let m = op.dense().add_scalar(alpha);
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::Oracle("operator is not positive definite".into()))?;
        let x = chol.solve(&DVector::from_column_slice(rho.values()));
        finish(spec, x.as_slice().to_vec())
    } else {
        finish(spec, conjugate_gradient(&op, rho.values())?)
    }
}

fn project_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn conjugate_gradient(op: &LinearSystemView<'_>, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = rhs.len();
    let mut b = rhs.to_vec();
    project_mean(&mut b);
    let bnorm = dot(&b, &b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b;
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    for _ in 0..20 * n {
        op.apply(&p, &mut ap);
        project_mean(&mut ap);
        let alpha = rr / dot(&p, &ap);
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, api)| *ri -= alpha * api);
        project_mean(&mut r);
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= CG_REL_TOL * bnorm {
            return Ok(x);
        }
        let beta = rr_new / rr;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
        rr = rr_new;
    }
    Err(Error::Oracle("conjugate gradient did not reach the residual target".into()))
}

/// In-place multi-dimensional FFT over the active axes.
fn fft_nd(spec: &GridSpec, data: &mut [Complex<f64>], inverse: bool) {
    let mut planner = FftPlanner::new();
    let strides = spec.strides();
    for axis in 0..spec.dim() {
        let n = spec.n(axis);
        let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
        let mut line = vec![Complex::default(); n];
        for start in 0..spec.len() {
            if spec.coords(start)[axis] != 0 {
                continue;
            }
            for (t, v) in line.iter_mut().enumerate() {
                *v = data[start + t * strides[axis]];
            }
            fft.process(&mut line);
            for (t, v) in line.iter().enumerate() {
                data[start + t * strides[axis]] = *v;
            }
        }
    }
}

/// Discrete Laplacian symbol `Σ_a (4/h_a²) sin²(π k_a / N_a)`.
pub fn stencil_symbol(spec: &GridSpec, k: [usize; 3]) -> f64 {
    (0..spec.dim())
        .map(|a| {
            let s = (std::f64::consts::PI * k[a] as f64 / spec.n(a) as f64).sin();
            4.0 * s * s / (spec.h(a) * spec.h(a))
        })
        .sum()
}

/// Constant-permittivity solve in transform space.
pub fn spectral_solve(rho: &NodeField, eps_const: f64) -> Result<OracleSolution> {
    if !(eps_const > 0.0 && eps_const.is_finite()) {
        return Err(Error::Oracle(format!("permittivity must be positive, got {eps_const}")));
    }
    let spec = rho.spec();
    let mut data: Vec<Complex<f64>> = rho.values().iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft_nd(spec, &mut data, false);
    for (n, v) in data.iter_mut().enumerate() {
        let lambda = stencil_symbol(spec, spec.coords(n));
        *v = if n == 0 { Complex::default() } else { *v / (eps_const * lambda) };
    }
    fft_nd(spec, &mut data, true);
    let scale = 1.0 / spec.len() as f64;
    finish(spec, data.iter().map(|c| c.re * scale).collect())
}

/// Spectral solve of `problem`; its permittivity must be uniform.
pub fn spectral_solve_problem(problem: &Problem) -> Result<OracleSolution> {
    let (lo, hi) = problem.eps().bounds();
    if lo != hi {
        return Err(Error::Oracle(format!("spectral solve needs constant permittivity, found range [{lo}, {hi}]")));
    }
    spectral_solve(problem.rho(), lo)
}
