//! Curl-free update kernels and sweep schedules.
//!
//! Every update adds a circulation `η` around a closed loop of edges (a single
//! cell face, or the boundary of a block face) or a uniform flux along a full
//! periodic line. Both leave `∇_h·(εE)` untouched at every node, and each `η`
//! is the exact minimiser of the resulting quadratic energy change.

use std::fmt;
use std::str::FromStr;

use log::warn;

use crate::error::{Error, Result};
use crate::grid::{EdgeCoeff, GridSpec, StaggeredField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelaxMethod {
    SingleMesh,
    ForwardHlr,
    ZigzagHlr,
}

impl RelaxMethod {
    pub const ALL: [RelaxMethod; 3] = [RelaxMethod::SingleMesh, RelaxMethod::ForwardHlr, RelaxMethod::ZigzagHlr];

    pub fn name(self) -> &'static str {
        match self {
            RelaxMethod::SingleMesh => "single",
            RelaxMethod::ForwardHlr => "forward",
            RelaxMethod::ZigzagHlr => "zigzag",
        }
    }

    pub fn is_hierarchical(self) -> bool {
        !matches!(self, RelaxMethod::SingleMesh)
    }
}

impl fmt::Display for RelaxMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RelaxMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single" | "single-mesh" | "singlemesh" | "plaquette" => Ok(RelaxMethod::SingleMesh),
            "forward" | "forward-hlr" => Ok(RelaxMethod::ForwardHlr),
            "zigzag" | "zigzag-hlr" => Ok(RelaxMethod::ZigzagHlr),
            other => Err(Error::Config(format!(
                "unknown method `{other}` (expected single, forward or zigzag)"
            ))),
        }
    }
}

/// Per-pass instrumentation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SweepTrace {
    /// Loop and line updates performed.
    pub updates_applied: u64,
    /// Edge entries visited by loop updates (cell or block stage).
    pub loop_edge_touches: u64,
    /// Edge entries visited by line shifts.
    pub line_edge_touches: u64,
    /// Largest `|η|` applied.
    pub flux_max: f64,
    /// Total energy decrease over the pass.
    pub energy_drop: f64,
}

impl SweepTrace {
    pub fn edge_touches(&self) -> u64 {
        self.loop_edge_touches + self.line_edge_touches
    }

    fn record(&mut self, eta: f64, drop: f64, touches: u64) {
        self.updates_applied += 1;
        self.loop_edge_touches += touches;
        self.flux_max = self.flux_max.max(eta.abs());
        self.energy_drop += drop;
    }
}

/// Rectangular loop of edges in plane `(a, b)` with `a < b`.
///
/// The loop encloses `len_a × len_b` faces whose lowest corner is `lo`; the
/// coordinate of `lo` along the remaining axis (3D) selects the layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaceLoop {
    pub lo: [usize; 3],
    pub plane: (usize, usize),
    pub len_a: usize,
    pub len_b: usize,
}

impl FaceLoop {
    pub fn cell(lo: [usize; 3], plane: (usize, usize)) -> Self {
        Self { lo, plane, len_a: 1, len_b: 1 }
    }

    /// Number of edge entries the loop touches.
    pub fn perimeter(&self) -> usize {
        2 * (self.len_a + self.len_b)
    }
}

/// Block of the hierarchy: `[lo, lo + side]` in finest-grid node indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub level: usize,
    pub lo: [usize; 3],
    pub side: [usize; 3],
}

impl Block {
    /// Upper corner, not wrapped (it may equal the cell count).
    pub fn hi(&self) -> [usize; 3] {
        [self.lo[0] + self.side[0], self.lo[1] + self.side[1], self.lo[2] + self.side[2]]
    }

    /// The boundary loops updated for this block: one per orientation and,
    /// in 3D, one per finest layer perpendicular to that orientation.
    pub fn loops(&self, spec: &GridSpec) -> Vec<FaceLoop> {
        let mut out = Vec::new();
        for &(a, b) in spec.planes() {
            let len_a = self.side[a];
            let len_b = self.side[b];
            if spec.dim() == 2 {
                out.push(FaceLoop { lo: self.lo, plane: (a, b), len_a, len_b });
            } else {
                let c = 3 - a - b;
                for layer in self.lo[c]..self.lo[c] + self.side[c] {
                    let mut lo = self.lo;
                    lo[c] = layer;
                    out.push(FaceLoop { lo, plane: (a, b), len_a, len_b });
                }
            }
        }
        out
    }
}

/// Rounding residue of compensated updates: the exact field is `e + residue`
/// until [`Residue::fold`] moves what fits back into `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residue {
    lo: Vec<Vec<f64>>,
}

impl Residue {
    pub fn new(spec: &GridSpec) -> Self {
        Self { lo: vec![vec![0.0; spec.len()]; spec.dim()] }
    }

    pub fn max_abs(&self) -> f64 {
        self.lo.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Adds the residue into `e`, keeping the part below its rounding.
    pub fn fold(&mut self, e: &mut StaggeredField) {
        for (hi, lo) in e.components_mut().iter_mut().zip(&mut self.lo) {
            for (h, l) in hi.iter_mut().zip(lo.iter_mut()) {
                let d = std::mem::take(l);
                bump::<true>(h, l, d);
            }
        }
    }
}

/// `hi += d`; with `C` the rounding error is accumulated in `lo` (TwoSum).
/// `hi` ends up bitwise equal in both modes.
#[inline(always)]
fn bump<const C: bool>(hi: &mut f64, lo: &mut f64, d: f64) {
    if C {
        let a = *hi;
        let s = a + d;
        let bb = s - a;
        *lo += (a - (s - bb)) + (d - bb);
        *hi = s;
    } else {
        *hi += d;
    }
}

/// Residue slot `i` of one component, or a scratch slot when uncompensated.
#[inline(always)]
fn slot<'a, const C: bool>(lo: &'a mut [f64], i: usize, scratch: &'a mut f64) -> &'a mut f64 {
    if C {
        &mut lo[i]
    } else {
        scratch
    }
}

#[inline]
fn wrap_add(spec: &GridSpec, p: [usize; 3], axis: usize, d: usize) -> [usize; 3] {
    let mut q = p;
    q[axis] = (p[axis] + d) % spec.n(axis);
    q
}

/// Linear and quadratic coefficients of the energy change for a plaquette,
/// divided by the cell volume: `δF/ΔV = η·c + η²·q/2`.
#[inline]
fn plaquette_coeffs(e: &StaggeredField, eps: &EdgeCoeff, cell: [usize; 3], (a, b): (usize, usize)) -> (f64, f64) {
    let spec = e.spec();
    let n = spec.index(cell);
    let na = spec.fwd(n, cell[a], a);
    let nb = spec.fwd(n, cell[b], b);
    let (ra, rb) = (1.0 / spec.h(a), 1.0 / spec.h(b));
    let (ea, eb) = (e.comp(a), e.comp(b));
    let (ia, ib) = (eps.inv(a), eps.inv(b));
    let c = (ea[n] - ea[nb]) * rb + (eb[na] - eb[n]) * ra;
    let q = (ia[n] + ia[nb]) * (rb * rb) + (ib[n] + ib[na]) * (ra * ra);
    (c, q)
}

/// Optimal circulation flux on one cell face.
pub fn plaquette_flux(e: &StaggeredField, eps: &EdgeCoeff, cell: [usize; 3], plane: (usize, usize)) -> f64 {
    let (c, q) = plaquette_coeffs(e, eps, cell, plane);
    -c / q
}

/// Adds circulation `eta` around one cell face.
pub fn apply_plaquette(e: &mut StaggeredField, eps: &EdgeCoeff, cell: [usize; 3], (a, b): (usize, usize), eta: f64) {
    let spec = e.spec().clone();
    let n = spec.index(cell);
    let na = spec.fwd(n, cell[a], a);
    let nb = spec.fwd(n, cell[b], b);
    let (wa, wb) = (eta * (1.0 / spec.h(a)), eta * (1.0 / spec.h(b)));
    let (ia, ib) = (eps.inv(a), eps.inv(b));
    let comps = e.components_mut();
    comps[b][n] -= wa * ib[n];
    comps[b][na] += wa * ib[na];
    comps[a][n] += wb * ia[n];
    comps[a][nb] -= wb * ia[nb];
}

/// Energy change produced by adding circulation `eta` around one cell face.
pub fn plaquette_energy_change(e: &StaggeredField, eps: &EdgeCoeff, cell: [usize; 3], plane: (usize, usize), eta: f64) -> f64 {
    let (c, q) = plaquette_coeffs(e, eps, cell, plane);
    e.spec().cell_volume() * (eta * c + 0.5 * eta * eta * q)
}

fn loop_coeffs(e: &StaggeredField, eps: &EdgeCoeff, lp: &FaceLoop) -> (f64, f64) {
    let spec = e.spec();
    let (a, b) = lp.plane;
    let (ra, rb) = (1.0 / spec.h(a), 1.0 / spec.h(b));
    let (ea, eb) = (e.comp(a), e.comp(b));
    let (ia, ib) = (eps.inv(a), eps.inv(b));

    let top = wrap_add(spec, lp.lo, b, lp.len_b);
    let right = wrap_add(spec, lp.lo, a, lp.len_a);

    // Accumulators start from the first term so a one-cell loop reproduces
    // the plaquette arithmetic exactly.
    let (n0, m0) = (spec.index(lp.lo), spec.index(top));
    let mut sa = ea[n0] - ea[m0];
    let mut qa = ia[n0] + ia[m0];
    for t in 1..lp.len_a {
        let n = spec.index(wrap_add(spec, lp.lo, a, t));
        let m = spec.index(wrap_add(spec, top, a, t));
        sa += ea[n] - ea[m];
        qa += ia[n] + ia[m];
    }
    let (l0, r0) = (spec.index(lp.lo), spec.index(right));
    let mut sb = eb[r0] - eb[l0];
    let mut qb = ib[l0] + ib[r0];
    for t in 1..lp.len_b {
        let l = spec.index(wrap_add(spec, lp.lo, b, t));
        let r = spec.index(wrap_add(spec, right, b, t));
        sb += eb[r] - eb[l];
        qb += ib[l] + ib[r];
    }
    (sa * rb + sb * ra, qa * (rb * rb) + qb * (ra * ra))
}

/// Optimal circulation flux around a block face loop.
pub fn block_flux(e: &StaggeredField, eps: &EdgeCoeff, lp: &FaceLoop) -> f64 {
    let (c, q) = loop_coeffs(e, eps, lp);
    -c / q
}

/// Energy change produced by adding circulation `eta` around a block face loop.
pub fn block_energy_change(e: &StaggeredField, eps: &EdgeCoeff, lp: &FaceLoop, eta: f64) -> f64 {
    let (c, q) = loop_coeffs(e, eps, lp);
    e.spec().cell_volume() * (eta * c + 0.5 * eta * eta * q)
}

/// Adds circulation `eta` on the boundary edges of a block face loop.
pub fn apply_block(e: &mut StaggeredField, eps: &EdgeCoeff, lp: &FaceLoop, eta: f64) {
    apply_loop::<false>(e, &mut [], eps, lp, eta);
}

fn apply_loop<const C: bool>(e: &mut StaggeredField, lo: &mut [Vec<f64>], eps: &EdgeCoeff, lp: &FaceLoop, eta: f64) {
    let spec = e.spec().clone();
    let (a, b) = lp.plane;
    let (wa, wb) = (eta * (1.0 / spec.h(a)), eta * (1.0 / spec.h(b)));
    let (ia, ib) = (eps.inv(a), eps.inv(b));
    let top = wrap_add(&spec, lp.lo, b, lp.len_b);
    let right = wrap_add(&spec, lp.lo, a, lp.len_a);
    let comps = e.components_mut();
    let mut scratch = 0.0;
    let mut empty: [f64; 0] = [];
    let (la, lb): (&mut [f64], &mut [f64]) = if C {
        let (x, y) = lo.split_at_mut(b);
        (&mut x[a], &mut y[0])
    } else {
        (&mut [], &mut empty)
    };
    for t in 0..lp.len_b {
        let l = spec.index(wrap_add(&spec, lp.lo, b, t));
        let r = spec.index(wrap_add(&spec, right, b, t));
        bump::<C>(&mut comps[b][l], slot::<C>(lb, l, &mut scratch), -(wa * ib[l]));
        bump::<C>(&mut comps[b][r], slot::<C>(lb, r, &mut scratch), wa * ib[r]);
    }
    for t in 0..lp.len_a {
        let n = spec.index(wrap_add(&spec, lp.lo, a, t));
        let m = spec.index(wrap_add(&spec, top, a, t));
        bump::<C>(&mut comps[a][n], slot::<C>(la, n, &mut scratch), wb * ia[n]);
        bump::<C>(&mut comps[a][m], slot::<C>(la, m, &mut scratch), -(wb * ia[m]));
    }
}

/// Result of one line shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineShift {
    pub eta: f64,
    pub energy_drop: f64,
}

/// Shifts component `axis` along the full periodic line through `line`
/// (its coordinate along `axis` is ignored) by `η/ε`, with `η = −ΣE / Σ(1/ε)`.
pub fn line_shift(e: &mut StaggeredField, eps: &EdgeCoeff, axis: usize, line: [usize; 3]) -> LineShift {
    let spec = e.spec();
    let mut base = line;
    base[axis] = 0;
    let start = spec.index(base);
    let stride = spec.strides()[axis];
    let len = spec.n(axis);
    let inv = eps.inv(axis);
    let vol = spec.cell_volume();
    let comp = e.comp_mut(axis);

    let mut sum_e = 0.0;
    let mut sum_inv = 0.0;
    for t in 0..len {
        let n = start + t * stride;
        sum_e += comp[n];
        sum_inv += inv[n];
    }
    let eta = -sum_e / sum_inv;
    if eta != 0.0 {
        for t in 0..len {
            let n = start + t * stride;
            comp[n] += eta * inv[n];
        }
    }
    LineShift { eta, energy_drop: 0.5 * vol * sum_e * sum_e / sum_inv }
}

/// Runs the line shift on every line of every axis. Lines of one axis are
/// disjoint, so they are processed together with per-line sums accumulated in
/// the same order as [`line_shift`].
pub fn line_shift_all(e: &mut StaggeredField, eps: &EdgeCoeff, trace: &mut SweepTrace) {
    line_shifts::<false>(e, &mut [], eps, trace);
}

fn line_shifts<const C: bool>(e: &mut StaggeredField, lo: &mut [Vec<f64>], eps: &EdgeCoeff, trace: &mut SweepTrace) {
    let spec = e.spec().clone();
    let mut scratch = 0.0;
    let vol = spec.cell_volume();
    for axis in 0..spec.dim() {
        let len = spec.n(axis);
        let lower = spec.strides()[axis];
        let upper = spec.len() / (lower * len);
        let inv = eps.inv(axis);
        let comp = e.comp_mut(axis);
        let lc: &mut [f64] = if C { &mut lo[axis] } else { &mut [] };
        let mut sum_e = vec![0.0; lower];
        let mut sum_inv = vec![0.0; lower];
        for u in 0..upper {
            let base = u * lower * len;
            sum_e.iter_mut().for_each(|v| *v = 0.0);
            sum_inv.iter_mut().for_each(|v| *v = 0.0);
            for t in 0..len {
                let off = base + t * lower;
                for l in 0..lower {
                    sum_e[l] += comp[off + l];
                    sum_inv[l] += inv[off + l];
                }
            }
            let eta: Vec<f64> = sum_e.iter().zip(&sum_inv).map(|(se, si)| -se / si).collect();
            for t in 0..len {
                let off = base + t * lower;
                for l in 0..lower {
                    if eta[l] != 0.0 {
                        let i = off + l;
                        bump::<C>(&mut comp[i], slot::<C>(lc, i, &mut scratch), eta[l] * inv[i]);
                    }
                }
            }
            for l in 0..lower {
                trace.updates_applied += 1;
                trace.line_edge_touches += len as u64;
                trace.flux_max = trace.flux_max.max(eta[l].abs());
                trace.energy_drop += 0.5 * vol * sum_e[l] * sum_e[l] / sum_inv[l];
            }
        }
    }
}

/// Levels `[1, 2, …, depth]`.
pub fn forward_schedule(depth: usize) -> Result<Vec<usize>> {
    if depth < 1 {
        return Err(Error::Config("forward schedule needs depth >= 1".into()));
    }
    Ok((1..=depth).collect())
}

/// Overlapping three-level sub-cycles `[ℓ, ℓ+1, ℓ+2]` for `ℓ = 1 … depth−2`.
pub fn zigzag_schedule(depth: usize) -> Result<Vec<usize>> {
    if depth < 3 {
        return Err(Error::Config(format!("zigzag schedule needs depth >= 3, got {depth}")));
    }
    Ok((1..=depth - 2).flat_map(|l| l..=l + 2).collect())
}

/// A validated sweep plan for one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    method: RelaxMethod,
    spec: GridSpec,
    log2_cells: [usize; 3],
    depth: usize,
    levels: Vec<usize>,
}

impl Schedule {
    pub fn new(spec: &GridSpec, method: RelaxMethod) -> Result<Self> {
        let mut log2_cells = [0usize; 3];
        for (a, &n) in spec.cells().iter().enumerate() {
            if method.is_hierarchical() && !n.is_power_of_two() {
                return Err(Error::Config(format!(
                    "{method} relaxation needs power-of-two cell counts; axis {a} has {n}"
                )));
            }
            log2_cells[a] = n.trailing_zeros() as usize;
        }
        let depth = log2_cells[..spec.dim()].iter().copied().max().unwrap_or(0);
        let levels = match method {
            RelaxMethod::SingleMesh => Vec::new(),
            RelaxMethod::ForwardHlr => forward_schedule(depth)?,
            RelaxMethod::ZigzagHlr if depth < 3 => {
                warn!("zigzag schedule is empty for depth {depth}; using the forward schedule");
                forward_schedule(depth)?
            }
            RelaxMethod::ZigzagHlr => zigzag_schedule(depth)?,
        };
        Ok(Self { method, spec: spec.clone(), log2_cells, depth, levels })
    }

    pub fn method(&self) -> RelaxMethod {
        self.method
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// `M` with `2^M` the largest cell count.
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Level sequence visited in one pass (empty for single-mesh).
    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    /// Block side per axis at `level`; axes shorter than `2^level` bottom out at one cell.
    pub fn block_side(&self, level: usize) -> [usize; 3] {
        let mut side = [1usize; 3];
        for (a, s) in side.iter_mut().enumerate().take(self.spec.dim()) {
            *s = self.spec.n(a) >> level.min(self.log2_cells[a]);
        }
        side
    }

    /// Blocks of `level` in lexicographic order, x fastest.
    pub fn blocks(&self, level: usize) -> Vec<Block> {
        let side = self.block_side(level);
        let dim = self.spec.dim();
        let counts: Vec<usize> = (0..3).map(|a| if a < dim { self.spec.n(a) / side[a] } else { 1 }).collect();
        let mut out = Vec::with_capacity(counts.iter().product());
        for k in 0..counts[2] {
            for j in 0..counts[1] {
                for i in 0..counts[0] {
                    out.push(Block { level, lo: [i * side[0], j * side[1], k * side[2]], side });
                }
            }
        }
        out
    }

    /// Edge entries visited by the loop stage of one pass, counted from the plan.
    pub fn loop_edge_touches_per_pass(&self) -> u64 {
        match self.method {
            RelaxMethod::SingleMesh => (4 * self.spec.len() * self.spec.planes().len()) as u64,
            _ => self
                .levels
                .iter()
                .flat_map(|&l| self.blocks(l))
                .flat_map(|b| b.loops(&self.spec))
                .map(|lp| lp.perimeter() as u64)
                .sum(),
        }
    }
}

/// Plaquette sweep over all cells in flat order, every face orientation per
/// cell. Same arithmetic as [`plaquette_flux`] and [`apply_plaquette`].
fn single_mesh_sweep<const C: bool>(e: &mut StaggeredField, lo: &mut [Vec<f64>], eps: &EdgeCoeff, trace: &mut SweepTrace) {
    let spec = e.spec().clone();
    let vol = spec.cell_volume();
    let cells = [spec.n(0), spec.n(1), spec.n(2)];
    let (nx, ny, nz) = (cells[0], cells[1], cells[2]);
    let strides = spec.strides();
    let recip = [1.0 / spec.h(0), 1.0 / spec.h(1), 1.0 / spec.h(2)];
    let comps = e.components_mut();
    let mut scratch = 0.0;
    let mut n = 0;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let cell = [i, j, k];
                for &(a, b) in spec.planes() {
                    let step = |axis: usize| {
                        if cell[axis] + 1 == cells[axis] {
                            n + strides[axis] - strides[axis] * cells[axis]
                        } else {
                            n + strides[axis]
                        }
                    };
                    let (na, nb) = (step(a), step(b));
                    let (ra, rb) = (recip[a], recip[b]);
                    let (ia, ib) = (eps.inv(a), eps.inv(b));
                    let (below, above) = comps.split_at_mut(b);
                    let (ea, eb) = (&mut below[a], &mut above[0]);
                    let c = (ea[n] - ea[nb]) * rb + (eb[na] - eb[n]) * ra;
                    let q = (ia[n] + ia[nb]) * (rb * rb) + (ib[n] + ib[na]) * (ra * ra);
                    let eta = -c / q;
                    if eta != 0.0 {
                        let (wa, wb) = (eta * ra, eta * rb);
                        let mut empty: [f64; 0] = [];
                        let (la, lb): (&mut [f64], &mut [f64]) = if C {
                            let (x, y) = lo.split_at_mut(b);
                            (&mut x[a], &mut y[0])
                        } else {
                            (&mut [], &mut empty)
                        };
                        bump::<C>(&mut eb[n], slot::<C>(lb, n, &mut scratch), -(wa * ib[n]));
                        bump::<C>(&mut eb[na], slot::<C>(lb, na, &mut scratch), wa * ib[na]);
                        bump::<C>(&mut ea[n], slot::<C>(la, n, &mut scratch), wb * ia[n]);
                        bump::<C>(&mut ea[nb], slot::<C>(la, nb, &mut scratch), -(wb * ia[nb]));
                    }
                    trace.record(eta, -0.5 * vol * c * eta, 4);
                }
                n += 1;
            }
        }
    }
}

/// One full relaxation pass: the cell or block stage, then all line shifts.
pub fn relax_pass(e: &mut StaggeredField, eps: &EdgeCoeff, schedule: &Schedule) -> SweepTrace {
    pass::<false>(e, &mut [], eps, schedule)
}

/// [`relax_pass`] with every update's rounding error kept in `residue`, which
/// is folded back into `e` at the end of the pass. Round-off then no longer
/// accumulates in the Gauss residual over long runs.
pub fn relax_pass_compensated(
    e: &mut StaggeredField,
    residue: &mut Residue,
    eps: &EdgeCoeff,
    schedule: &Schedule,
) -> SweepTrace {
    debug_assert_eq!(residue.lo.len(), e.spec().dim());
    let trace = pass::<true>(e, &mut residue.lo, eps, schedule);
    residue.fold(e);
    trace
}

fn pass<const C: bool>(e: &mut StaggeredField, lo: &mut [Vec<f64>], eps: &EdgeCoeff, schedule: &Schedule) -> SweepTrace {
    debug_assert_eq!(e.spec(), schedule.spec());
    debug_assert_eq!(e.spec(), eps.spec());
    let spec = e.spec().clone();
    let vol = spec.cell_volume();
    let mut trace = SweepTrace::default();

    match schedule.method() {
        RelaxMethod::SingleMesh => single_mesh_sweep::<C>(e, lo, eps, &mut trace),
        _ => {
            for &level in schedule.levels() {
                for block in schedule.blocks(level) {
                    for lp in block.loops(&spec) {
                        let (c, q) = loop_coeffs(e, eps, &lp);
                        let eta = -c / q;
                        if eta != 0.0 {
                            apply_loop::<C>(e, lo, eps, &lp, eta);
                        }
                        trace.record(eta, 0.5 * vol * c * c / q, lp.perimeter() as u64);
                    }
                }
            }
        }
    }
    line_shifts::<C>(e, lo, eps, &mut trace);
    trace
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{average_staggered, discrete_curl, discrete_div, edge_coeff, energy, neg_gradient, NodeField};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_setup(dim: usize, n: usize, seed: u64) -> (StaggeredField, EdgeCoeff) {
        let spec = GridSpec::cube(dim, n, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = edge_coeff(
            &NodeField::from_values(&spec, (0..spec.len()).map(|_| rng.gen_range(0.5..3.0)).collect()).unwrap(),
        )
        .unwrap();
        let comp = (0..dim).map(|_| (0..spec.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        (StaggeredField::from_components(&spec, comp).unwrap(), eps)
    }

    fn max_diff(a: &NodeField, b: &NodeField) -> f64 {
        a.values().iter().zip(b.values()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn method_names_round_trip() {
        for m in RelaxMethod::ALL {
            assert_eq!(m.name().parse::<RelaxMethod>().unwrap(), m);
        }
        assert!("multigrid".parse::<RelaxMethod>().is_err());
    }

    #[test]
    fn plaquette_flux_hand_example() {
        // Unit spacing, ε ≡ 1. (E_{½,0} − E_{½,1}) = 1 and (E_{1,½} − E_{0,½}) = 1.
        let spec = GridSpec::cube(2, 2, 2.0).unwrap();
        let eps = EdgeCoeff::uniform(&spec, 1.0).unwrap();
        let mut e = StaggeredField::zeros(&spec);
        e.comp_mut(0)[spec.index([0, 0, 0])] = 1.0;
        e.comp_mut(1)[spec.index([1, 0, 0])] = 1.0;
        assert_eq!(plaquette_flux(&e, &eps, [0, 0, 0], (0, 1)), -0.5);
    }

    #[test]
    fn plaquette_flux_vanishes_on_gradients_and_constants() {
        let (_, eps) = random_setup(2, 6, 5);
        let spec = eps.spec().clone();
        let phi = NodeField::from_fn(&spec, |x| (x[0] * 2.0).sin() * (x[1] + 0.3).cos());
        let g = neg_gradient(&phi);
        let c = StaggeredField::from_fn(&spec, |a, _| 0.7 - a as f64);
        for n in 0..spec.len() {
            let cell = spec.coords(n);
            assert!(plaquette_flux(&g, &eps, cell, (0, 1)).abs() < 1e-14);
            assert_eq!(plaquette_flux(&c, &eps, cell, (0, 1)), 0.0);
        }
    }

    #[test]
    fn plaquette_update_properties() {
        let (mut e, eps) = random_setup(2, 6, 6);
        let spec = e.spec().clone();
        let rho = discrete_div(&e, &eps).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        for _ in 0..50 {
            let cell = [rng.gen_range(0..6), rng.gen_range(0..6), 0];
            let before = energy(&e, &eps);
            let eta = plaquette_flux(&e, &eps, cell, (0, 1));
            let predicted = plaquette_energy_change(&e, &eps, cell, (0, 1), eta);
            let snapshot = e.clone();
            apply_plaquette(&mut e, &eps, cell, (0, 1), eta);
            let after = energy(&e, &eps);
            assert!(predicted <= 0.0);
            assert!(((after - before) - predicted).abs() <= 1e-12 * before.max(predicted.abs()));
            assert!(plaquette_flux(&e, &eps, cell, (0, 1)).abs() < 1e-14);
            assert!(max_diff(&discrete_div(&e, &eps).unwrap(), &rho) < 1e-13);
            let changed = e
                .components()
                .iter()
                .flatten()
                .zip(snapshot.components().iter().flatten())
                .filter(|(x, y)| x != y)
                .count();
            assert!(changed <= 4);
        }
        let _ = spec;
    }

    #[test]
    fn plaquette_zero_and_inverse() {
        let (e0, eps) = random_setup(2, 4, 7);
        let mut e = e0.clone();
        apply_plaquette(&mut e, &eps, [1, 2, 0], (0, 1), 0.0);
        assert_eq!(e, e0);
        apply_plaquette(&mut e, &eps, [3, 3, 0], (0, 1), 0.37);
        apply_plaquette(&mut e, &eps, [3, 3, 0], (0, 1), -0.37);
        assert!(e.max_abs_diff(&e0) <= 1e-15);
    }

    #[test]
    fn plaquette_3d_preserves_gauss() {
        let (mut e, eps) = random_setup(3, 4, 8);
        let rho = discrete_div(&e, &eps).unwrap();
        let spec = e.spec().clone();
        for n in 0..spec.len() {
            for &plane in spec.planes() {
                let cell = spec.coords(n);
                let eta = plaquette_flux(&e, &eps, cell, plane);
                apply_plaquette(&mut e, &eps, cell, plane, eta);
            }
        }
        assert!(max_diff(&discrete_div(&e, &eps).unwrap(), &rho) < 1e-13);
    }

    #[test]
    fn unit_block_matches_plaquette_bitwise() {
        let (e, eps) = random_setup(2, 8, 9);
        for n in 0..e.spec().len() {
            let cell = e.spec().coords(n);
            let lp = FaceLoop::cell(cell, (0, 1));
            let p = plaquette_flux(&e, &eps, cell, (0, 1));
            let b = block_flux(&e, &eps, &lp);
            assert_eq!(p.to_bits(), b.to_bits());
            let mut e1 = e.clone();
            let mut e2 = e.clone();
            apply_plaquette(&mut e1, &eps, cell, (0, 1), p);
            apply_block(&mut e2, &eps, &lp, b);
            assert_eq!(e1, e2);
        }
    }

    #[test]
    fn block_flux_hand_example() {
        // 4×4, unit spacing, ε ≡ 1; level-1 block (0,0)–(2,2).
        let spec = GridSpec::cube(2, 4, 4.0).unwrap();
        let eps = EdgeCoeff::uniform(&spec, 1.0).unwrap();
        let mut e = StaggeredField::zeros(&spec);
        // Bottom edge E_x(i+½, 0) for i = 0, 1 sums to 1; right edge E_y(2, j+½), j = 0, 1, sums to 1.
        e.comp_mut(0)[spec.index([0, 0, 0])] = 0.25;
        e.comp_mut(0)[spec.index([1, 0, 0])] = 0.75;
        e.comp_mut(1)[spec.index([2, 0, 0])] = 0.5;
        e.comp_mut(1)[spec.index([2, 1, 0])] = 0.5;
        // Interior edges carry values that must not enter the flux nor change.
        e.comp_mut(0)[spec.index([0, 1, 0])] = 9.0;
        e.comp_mut(1)[spec.index([1, 0, 0])] = -4.0;
        let lp = FaceLoop { lo: [0, 0, 0], plane: (0, 1), len_a: 2, len_b: 2 };
        let eta = block_flux(&e, &eps, &lp);
        // η = −(1·1 + 1·1) / (4 + 4)
        assert_eq!(eta, -0.25);
        let before = e.clone();
        apply_block(&mut e, &eps, &lp, eta);
        assert_eq!(e.comp(0)[spec.index([0, 1, 0])], 9.0);
        assert_eq!(e.comp(1)[spec.index([1, 0, 0])], -4.0);
        let changed = e
            .components()
            .iter()
            .flatten()
            .zip(before.components().iter().flatten())
            .filter(|(x, y)| x != y)
            .count();
        assert_eq!(changed, 8);
        assert!(block_flux(&e, &eps, &lp).abs() < 1e-15);
    }

    #[test]
    fn block_update_preserves_gauss_and_lowers_energy() {
        for (dim, n) in [(2, 16), (3, 8)] {
            let (mut e, eps) = random_setup(dim, n, 10 + dim as u64);
            let rho = discrete_div(&e, &eps).unwrap();
            let sched = Schedule::new(e.spec(), RelaxMethod::ForwardHlr).unwrap();
            for &level in sched.levels() {
                for block in sched.blocks(level) {
                    for lp in block.loops(e.spec()) {
                        let before = energy(&e, &eps);
                        let eta = block_flux(&e, &eps, &lp);
                        let predicted = block_energy_change(&e, &eps, &lp, eta);
                        apply_block(&mut e, &eps, &lp, eta);
                        let after = energy(&e, &eps);
                        assert!(after <= before + 1e-14 * before);
                        assert!(((after - before) - predicted).abs() <= 1e-12 * before);
                    }
                }
                assert!(max_diff(&discrete_div(&e, &eps).unwrap(), &rho) < 1e-12);
            }
        }
    }

    #[test]
    fn block_flux_vanishes_for_curl_free() {
        let (_, eps) = random_setup(2, 8, 12);
        let spec = eps.spec().clone();
        let phi = NodeField::from_fn(&spec, |x| (x[0] * 3.1).cos() + x[1].sin());
        let g = neg_gradient(&phi);
        let sched = Schedule::new(&spec, RelaxMethod::ForwardHlr).unwrap();
        for &level in sched.levels() {
            for b in sched.blocks(level) {
                for lp in b.loops(&spec) {
                    assert!(block_flux(&g, &eps, &lp).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn line_shift_cases() {
        let spec = GridSpec::cube(2, 8, 8.0).unwrap();
        let eps1 = EdgeCoeff::uniform(&spec, 1.0).unwrap();
        let mut e = StaggeredField::from_fn(&spec, |a, _| if a == 0 { 0.6 } else { 0.0 });
        let s = line_shift(&mut e, &eps1, 0, [0, 3, 0]);
        assert!((s.eta + 0.6).abs() < 1e-15);
        for i in 0..8 {
            assert!(e.comp(0)[spec.index([i, 3, 0])].abs() < 1e-15);
            assert_eq!(e.comp(0)[spec.index([i, 2, 0])], 0.6);
        }

        let mut z = StaggeredField::zeros(&spec);
        let s = line_shift(&mut z, &eps1, 1, [2, 0, 0]);
        assert_eq!(s.eta, 0.0);
        assert_eq!(z, StaggeredField::zeros(&spec));

        let (mut e, eps) = random_setup(2, 8, 13);
        let spec = e.spec().clone();
        let rho = discrete_div(&e, &eps).unwrap();
        let line: Vec<usize> = (0..8).map(|j| spec.index([5, j, 0])).collect();
        let sum_e: f64 = line.iter().map(|&n| e.comp(1)[n]).sum();
        let sum_inv: f64 = line.iter().map(|&n| 1.0 / eps.comp(1)[n]).sum();
        let s = line_shift(&mut e, &eps, 1, [5, 0, 0]);
        assert!((s.eta + sum_e / sum_inv).abs() < 1e-14);
        let post: f64 = line.iter().map(|&n| e.comp(1)[n]).sum();
        assert!(post.abs() <= 1e-13 * 8.0);
        assert!(max_diff(&discrete_div(&e, &eps).unwrap(), &rho) < 1e-13);
    }

    #[test]
    fn schedules() {
        assert_eq!(forward_schedule(4).unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(zigzag_schedule(4).unwrap(), vec![1, 2, 3, 2, 3, 4]);
        assert_eq!(zigzag_schedule(5).unwrap(), vec![1, 2, 3, 2, 3, 4, 3, 4, 5]);
        assert_eq!(zigzag_schedule(3).unwrap(), vec![1, 2, 3]);
        assert!(forward_schedule(0).is_err());
        assert!(zigzag_schedule(2).is_err());
    }

    #[test]
    fn schedule_validation_and_fallback() {
        let spec = GridSpec::cube(2, 12, 1.0).unwrap();
        assert!(Schedule::new(&spec, RelaxMethod::ForwardHlr).is_err());
        assert!(Schedule::new(&spec, RelaxMethod::SingleMesh).is_ok());
        let small = GridSpec::cube(2, 4, 1.0).unwrap();
        let s = Schedule::new(&small, RelaxMethod::ZigzagHlr).unwrap();
        assert_eq!(s.levels(), &[1, 2]);
    }

    #[test]
    fn block_addressing() {
        let spec = GridSpec::cube(2, 16, 1.0).unwrap();
        let s = Schedule::new(&spec, RelaxMethod::ForwardHlr).unwrap();
        assert_eq!(s.depth(), 4);
        for k in 1..=4 {
            let side = 1usize << (4 - k);
            let blocks = s.blocks(k);
            assert_eq!(blocks.len(), 1 << (2 * k));
            for (idx, b) in blocks.iter().enumerate() {
                let (m, nn) = (idx % (1 << k), idx / (1 << k));
                assert_eq!(b.lo, [side * m, side * nn, 0]);
                assert_eq!(b.hi(), [side * (m + 1), side * (nn + 1), 1]);
                assert_eq!(b.loops(&spec)[0].perimeter(), 4 * side);
            }
        }
    }

    #[test]
    fn per_pass_touch_counts_match_closed_forms() {
        for m in 2..=7usize {
            let n = 1usize << m;
            let spec = GridSpec::cube(2, n, 2.0).unwrap();
            let single = Schedule::new(&spec, RelaxMethod::SingleMesh).unwrap();
            assert_eq!(single.loop_edge_touches_per_pass(), (4 * n * n) as u64);
            let fwd = Schedule::new(&spec, RelaxMethod::ForwardHlr).unwrap();
            let closed: usize = (1..=m).map(|k| (1 << (2 * k)) * 4 * (1 << (m - k))).sum();
            assert_eq!(fwd.loop_edge_touches_per_pass(), closed as u64);

            let (mut e, eps) = random_setup(2, n, 14);
            let t = relax_pass(&mut e, &eps, &fwd);
            assert_eq!(t.loop_edge_touches, closed as u64);
            assert_eq!(t.line_edge_touches, (2 * n * n) as u64);
        }
    }

    #[test]
    fn pass_invariants_all_methods() {
        for (dim, n) in [(2usize, 16usize), (3, 8)] {
            for method in RelaxMethod::ALL {
                let (mut e, eps) = random_setup(dim, n, 20 + n as u64);
                let rho = discrete_div(&e, &eps).unwrap();
                let sched = Schedule::new(e.spec(), method).unwrap();
                let mut prev = energy(&e, &eps);
                for _ in 0..5 {
                    let t = relax_pass(&mut e, &eps, &sched);
                    let now = energy(&e, &eps);
                    assert!(t.energy_drop >= 0.0 && t.flux_max >= 0.0);
                    assert!(now <= prev * (1.0 + 1e-14));
                    assert!(((prev - now) - t.energy_drop).abs() <= 1e-10 * prev);
                    prev = now;
                    assert!(max_diff(&discrete_div(&e, &eps).unwrap(), &rho) < 1e-12);
                    let scale = e.max_abs();
                    for m in average_staggered(&e) {
                        assert!(m.abs() <= 1e-13 * scale);
                    }
                }
            }
        }
    }

    #[test]
    fn minimiser_is_a_fixed_point() {
        // A discrete gradient has zero curl and, being periodic, zero mean.
        let (_, eps) = random_setup(2, 8, 30);
        let spec = eps.spec().clone();
        let phi = NodeField::from_fn(&spec, |x| (x[0] * std::f64::consts::PI).sin() * (x[1] * std::f64::consts::PI).cos());
        let mut e = neg_gradient(&phi);
        let e0 = e.clone();
        for method in RelaxMethod::ALL {
            let sched = Schedule::new(&spec, method).unwrap();
            let t = relax_pass(&mut e, &eps, &sched);
            assert!(t.flux_max <= 1e-13, "{method}: {}", t.flux_max);
            assert!(t.energy_drop <= 1e-13 * energy(&e, &eps));
        }
        assert!(e.max_abs_diff(&e0) < 1e-13);
        assert!(discrete_curl(&e).max_abs() < 1e-12);
    }

    #[test]
    fn batched_line_shifts_match_single_lines() {
        for (dim, n) in [(2usize, 8usize), (3, 4)] {
            let (e0, eps) = random_setup(dim, n, 31);
            let mut batched = e0.clone();
            let mut trace = SweepTrace::default();
            line_shift_all(&mut batched, &eps, &mut trace);
            let mut single = e0.clone();
            let spec = e0.spec().clone();
            let mut drop = 0.0;
            for axis in 0..dim {
                for flat in 0..spec.len() {
                    let c = spec.coords(flat);
                    if c[axis] == 0 {
                        drop += line_shift(&mut single, &eps, axis, c).energy_drop;
                    }
                }
            }
            assert_eq!(batched, single);
            assert!((trace.energy_drop - drop).abs() <= 1e-15 * drop.abs().max(1.0));
            assert_eq!(trace.line_edge_touches, (dim * spec.len()) as u64);
        }
    }

    #[test]
    fn compensated_pass_tracks_plain_pass() {
        for method in RelaxMethod::ALL {
            for (dim, n) in [(2usize, 8usize), (3, 4)] {
                let (e0, eps) = random_setup(dim, n, 41);
                let schedule = Schedule::new(e0.spec(), method).unwrap();
                let mut plain = e0.clone();
                let mut comp = e0.clone();
                let mut residue = Residue::new(e0.spec());
                let t1 = relax_pass(&mut plain, &eps, &schedule);
                let t2 = relax_pass_compensated(&mut comp, &mut residue, &eps, &schedule);
                assert_eq!(t1, t2, "{method} {dim}D: the update sequence is unchanged");
                assert!(plain.max_abs_diff(&comp) <= 1e-14 * plain.max_abs());
                let ulp = f64::EPSILON * comp.max_abs();
                assert!(residue.max_abs() <= ulp, "{method} {dim}D residue {}", residue.max_abs());
            }
        }
    }

    #[test]
    fn compensated_passes_do_not_accumulate_gauss_drift() {
        let (mut plain, eps) = random_setup(2, 32, 43);
        let schedule = Schedule::new(plain.spec(), RelaxMethod::SingleMesh).unwrap();
        let div0 = discrete_div(&plain, &eps).unwrap();
        let mut comp = plain.clone();
        let mut residue = Residue::new(plain.spec());
        for _ in 0..3000 {
            relax_pass(&mut plain, &eps, &schedule);
            relax_pass_compensated(&mut comp, &mut residue, &eps, &schedule);
        }
        let drift = |e: &StaggeredField| discrete_div(e, &eps).unwrap().sub(&div0).unwrap().max_abs();
        let (d_plain, d_comp) = (drift(&plain), drift(&comp));
        assert!(d_comp < 1e-13, "compensated drift {d_comp:e}");
        assert!(d_comp < d_plain, "compensated {d_comp:e} plain {d_plain:e}");
    }
}
