//! Periodic staggered grids and the discrete operators on them.
//!
//! Nodes sit at `(i·h_x, j·h_y[, k·h_z])`. Component `a` of a staggered field
//! keyed by node index `p` lives at `p + ½·e_a`. All arrays are flat and
//! row-major with the x index fastest, and every index wraps periodically.

use crate::error::{Error, Result};
use crate::sum::{compensated, CompensatedSum};

/// Face orientations in the order they are visited: xy, yz, xz.
pub const PLANES_3D: [(usize, usize); 3] = [(0, 1), (1, 2), (0, 2)];
pub const PLANES_2D: [(usize, usize); 1] = [(0, 1)];

/// Uniform periodic grid in two or three dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    dim: usize,
    cells: [usize; 3],
    extent: [f64; 3],
    spacing: [f64; 3],
}

impl GridSpec {
    pub fn new(extent: &[f64], cells: &[usize]) -> Result<Self> {
        let dim = cells.len();
        if !(2..=3).contains(&dim) {
            return Err(Error::Grid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if extent.len() != dim {
            return Err(Error::Grid(format!(
                "{} extents given for a {dim}-dimensional grid",
                extent.len()
            )));
        }
        let mut c = [1usize; 3];
        let mut l = [1.0f64; 3];
        let mut h = [1.0f64; 3];
        for a in 0..dim {
            if cells[a] < 2 {
                return Err(Error::Grid(format!("axis {a} needs at least 2 cells, got {}", cells[a])));
            }
            if !(extent[a].is_finite() && extent[a] > 0.0) {
                return Err(Error::Grid(format!("axis {a} extent must be positive, got {}", extent[a])));
            }
            c[a] = cells[a];
            l[a] = extent[a];
            h[a] = extent[a] / cells[a] as f64;
        }
        Ok(Self { dim, cells: c, extent: l, spacing: h })
    }

    /// Square (or cubic) grid with `n` cells per axis on `(0, length)^dim`.
    pub fn cube(dim: usize, n: usize, length: f64) -> Result<Self> {
        Self::new(&vec![length; dim], &vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    /// Number of nodes, which equals the number of cells and of entries per
    /// staggered component.
    pub fn len(&self) -> usize {
        self.cells().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Area (2D) or volume (3D) of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    pub fn planes(&self) -> &'static [(usize, usize)] {
        if self.dim == 2 {
            &PLANES_2D
        } else {
            &PLANES_3D
        }
    }

    #[inline]
    pub(crate) fn strides(&self) -> [usize; 3] {
        [1, self.cells[0], self.cells[0] * self.cells[1]]
    }

    #[inline]
    pub(crate) fn n(&self, axis: usize) -> usize {
        self.cells[axis]
    }

    #[inline]
    pub(crate) fn h(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }

    /// Flat index of an in-range coordinate triple (unused axes must be 0).
    #[inline]
    pub fn index(&self, p: [usize; 3]) -> usize {
        p[0] + self.cells[0] * (p[1] + self.cells[1] * p[2])
    }

    /// Flat index of an arbitrary integer coordinate, wrapped periodically.
    pub fn index_wrapped(&self, p: [isize; 3]) -> usize {
        let mut q = [0usize; 3];
        for a in 0..self.dim {
            q[a] = p[a].rem_euclid(self.cells[a] as isize) as usize;
        }
        self.index(q)
    }

    #[inline]
    pub fn coords(&self, flat: usize) -> [usize; 3] {
        let i = flat % self.cells[0];
        let r = flat / self.cells[0];
        [i, r % self.cells[1], r / self.cells[1]]
    }

    /// Neighbour of `flat` one step forward along `axis`.
    #[inline]
    pub(crate) fn fwd(&self, flat: usize, coord: usize, axis: usize) -> usize {
        let s = self.strides()[axis];
        if coord + 1 == self.cells[axis] {
            flat + s - s * self.cells[axis]
        } else {
            flat + s
        }
    }

    /// Neighbour of `flat` one step backward along `axis`.
    #[inline]
    pub(crate) fn bwd(&self, flat: usize, coord: usize, axis: usize) -> usize {
        let s = self.strides()[axis];
        if coord == 0 {
            flat + s * (self.cells[axis] - 1)
        } else {
            flat - s
        }
    }

    /// Physical position of node `p`.
    pub fn node_position(&self, p: [usize; 3]) -> [f64; 3] {
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = p[a] as f64 * self.spacing[a];
        }
        x
    }

    /// Physical position of staggered component `axis` keyed by node `p`.
    pub fn edge_position(&self, axis: usize, p: [usize; 3]) -> [f64; 3] {
        let mut x = self.node_position(p);
        x[axis] += 0.5 * self.spacing[axis];
        x
    }

    pub(crate) fn check_same(&self, other: &GridSpec, a: &'static str, b: &'static str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::SpecMismatch(a, b))
        }
    }
}

/// Node-centred periodic scalar grid function.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeField {
    spec: GridSpec,
    values: Vec<f64>,
}

impl NodeField {
    pub fn zeros(spec: &GridSpec) -> Self {
        Self { spec: spec.clone(), values: vec![0.0; spec.len()] }
    }

    pub fn constant(spec: &GridSpec, c: f64) -> Self {
        Self { spec: spec.clone(), values: vec![c; spec.len()] }
    }

    pub fn from_values(spec: &GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::Grid(format!(
                "node field needs {} values, got {}",
                spec.len(),
                values.len()
            )));
        }
        Ok(Self { spec: spec.clone(), values })
    }

    /// Samples `f` at every node position.
    pub fn from_fn(spec: &GridSpec, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..spec.len()).map(|n| f(spec.node_position(spec.coords(n)))).collect();
        Self { spec: spec.clone(), values }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at an integer coordinate with periodic wrap-around.
    pub fn at(&self, p: [isize; 3]) -> f64 {
        self.values[self.spec.index_wrapped(p)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn shift(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v += c);
    }

    /// Pointwise `self - other`.
    pub fn sub(&self, other: &NodeField) -> Result<NodeField> {
        self.spec.check_same(&other.spec, "node field", "node field")?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(NodeField { spec: self.spec.clone(), values })
    }
}

/// Edge-centred periodic vector field, one flat array per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct StaggeredField {
    spec: GridSpec,
    comp: Vec<Vec<f64>>,
}

impl StaggeredField {
    pub fn zeros(spec: &GridSpec) -> Self {
        Self { spec: spec.clone(), comp: vec![vec![0.0; spec.len()]; spec.dim()] }
    }

    pub fn from_components(spec: &GridSpec, comp: Vec<Vec<f64>>) -> Result<Self> {
        if comp.len() != spec.dim() || comp.iter().any(|c| c.len() != spec.len()) {
            return Err(Error::Grid(format!(
                "staggered field needs {} components of {} values",
                spec.dim(),
                spec.len()
            )));
        }
        Ok(Self { spec: spec.clone(), comp })
    }

    /// Samples `f(axis, position)` at every staggered location.
    pub fn from_fn(spec: &GridSpec, f: impl Fn(usize, [f64; 3]) -> f64) -> Self {
        let comp = (0..spec.dim())
            .map(|a| (0..spec.len()).map(|n| f(a, spec.edge_position(a, spec.coords(n)))).collect())
            .collect();
        Self { spec: spec.clone(), comp }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn comp(&self, axis: usize) -> &[f64] {
        &self.comp[axis]
    }

    pub fn comp_mut(&mut self, axis: usize) -> &mut [f64] {
        &mut self.comp[axis]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.comp
    }

    pub(crate) fn components_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.comp
    }

    pub fn max_abs(&self) -> f64 {
        self.comp.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest entrywise difference, in the max norm.
    pub fn max_abs_diff(&self, other: &StaggeredField) -> f64 {
        debug_assert_eq!(self.spec, other.spec);
        self.comp
            .iter()
            .flatten()
            .zip(other.comp.iter().flatten())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &StaggeredField) {
        debug_assert_eq!(self.spec, other.spec);
        for (c, o) in self.comp.iter_mut().zip(&other.comp) {
            for (x, y) in c.iter_mut().zip(o) {
                *x += alpha * y;
            }
        }
    }

    pub fn scaled(&self, alpha: f64) -> StaggeredField {
        let comp = self.comp.iter().map(|c| c.iter().map(|v| alpha * v).collect()).collect();
        StaggeredField { spec: self.spec.clone(), comp }
    }
}

/// Permittivity averaged onto the staggered locations of the field.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeCoeff {
    spec: GridSpec,
    eps: Vec<Vec<f64>>,
    inv: Vec<Vec<f64>>,
    bounds: (f64, f64),
}

impl EdgeCoeff {
    pub fn uniform(spec: &GridSpec, value: f64) -> Result<Self> {
        edge_coeff(&NodeField::constant(spec, value))
    }

    /// Permittivity given directly at the edges, one array per axis.
    pub fn from_components(spec: &GridSpec, eps: Vec<Vec<f64>>) -> Result<Self> {
        if eps.len() != spec.dim() || eps.iter().any(|c| c.len() != spec.len()) {
            return Err(Error::Grid(format!(
                "edge permittivity needs {} components of {} values",
                spec.dim(),
                spec.len()
            )));
        }
        for (axis, comp) in eps.iter().enumerate() {
            if let Some((n, &value)) = comp.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
                let index = spec.coords(n)[..spec.dim()].to_vec();
                return Err(Error::NonPositiveEdgePermittivity { axis, index, value });
            }
        }
        let inv = eps.iter().map(|c| c.iter().map(|v| 1.0 / v).collect()).collect();
        let flat = eps.iter().flatten();
        let lo = flat.clone().copied().fold(f64::INFINITY, f64::min);
        let hi = flat.copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { spec: spec.clone(), eps, inv, bounds: (lo, hi) })
    }

    /// Samples `f(axis, position)` at every edge midpoint.
    pub fn sample(spec: &GridSpec, f: impl Fn(usize, [f64; 3]) -> f64) -> Result<Self> {
        let eps = StaggeredField::from_fn(spec, f);
        Self::from_components(spec, eps.components().to_vec())
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn comp(&self, axis: usize) -> &[f64] {
        &self.eps[axis]
    }

    /// Reciprocals `1/ε` at the same locations.
    pub fn inv(&self, axis: usize) -> &[f64] {
        &self.inv[axis]
    }

    /// `(ε_min, ε_max)` over all edges.
    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }
}

/// Averages node permittivities onto edges: `ε_{p+½e_a} = (ε_p + ε_{p+e_a})/2`.
pub fn edge_coeff(eps_nodes: &NodeField) -> Result<EdgeCoeff> {
    let spec = eps_nodes.spec();
    if let Some((n, &v)) = eps_nodes.values().iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        let c = spec.coords(n);
        return Err(Error::NonPositivePermittivity { index: c[..spec.dim()].to_vec(), value: v });
    }
    let vals = eps_nodes.values();
    let mut eps = Vec::with_capacity(spec.dim());
    for a in 0..spec.dim() {
        let comp: Vec<f64> = (0..spec.len())
            .map(|n| {
                let c = spec.coords(n);
                0.5 * (vals[n] + vals[spec.fwd(n, c[a], a)])
            })
            .collect();
        eps.push(comp);
    }
    EdgeCoeff::from_components(spec, eps)
}

/// `∇_h·(εE)` at every node, using backward differences of the flux.
pub fn discrete_div(e: &StaggeredField, eps: &EdgeCoeff) -> Result<NodeField> {
    e.spec().check_same(eps.spec(), "field", "permittivity")?;
    let spec = e.spec();
    let mut out = vec![0.0; spec.len()];
    for a in 0..spec.dim() {
        let ea = e.comp(a);
        let ka = eps.comp(a);
        let h = spec.h(a);
        for (n, o) in out.iter_mut().enumerate() {
            let c = spec.coords(n);
            let m = spec.bwd(n, c[a], a);
            *o += (ka[n] * ea[n] - ka[m] * ea[m]) / h;
        }
    }
    NodeField::from_values(spec, out)
}

/// Discrete curl on cell faces. In 2D there is a single orientation; in 3D
/// the orientations follow [`PLANES_3D`]. Entry `n` of each plane belongs to
/// the face whose lowest corner is node `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurlField {
    pub planes: Vec<(usize, usize)>,
    pub values: Vec<Vec<f64>>,
}

impl CurlField {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn plane(&self, plane: (usize, usize)) -> Option<&[f64]> {
        self.planes.iter().position(|p| *p == plane).map(|k| self.values[k].as_slice())
    }
}

/// Circulation `(E_b(p+e_a) − E_b(p))/h_a − (E_a(p+e_b) − E_a(p))/h_b` on every face.
pub fn discrete_curl(e: &StaggeredField) -> CurlField {
    let spec = e.spec();
    let planes = spec.planes().to_vec();
    let values = planes
        .iter()
        .map(|&(a, b)| {
            let (ea, eb) = (e.comp(a), e.comp(b));
            let (ha, hb) = (spec.h(a), spec.h(b));
            (0..spec.len())
                .map(|n| {
                    let c = spec.coords(n);
                    let na = spec.fwd(n, c[a], a);
                    let nb = spec.fwd(n, c[b], b);
                    (eb[na] - eb[n]) / ha - (ea[nb] - ea[n]) / hb
                })
                .collect()
        })
        .collect();
    CurlField { planes, values }
}

/// Discrete energy `(ΔV/2) Σ_a Σ_p ε_a(p) E_a(p)²`.
pub fn energy(e: &StaggeredField, eps: &EdgeCoeff) -> f64 {
    debug_assert_eq!(e.spec(), eps.spec());
    let mut acc = CompensatedSum::default();
    for a in 0..e.spec().dim() {
        for (x, k) in e.comp(a).iter().zip(eps.comp(a)) {
            acc.add(k * x * x);
        }
    }
    0.5 * e.spec().cell_volume() * acc.value()
}

/// Discrete average of a node function.
pub fn average_node(f: &NodeField) -> f64 {
    compensated(f.values().iter().copied()) / f.spec().len() as f64
}

/// Per-component mean of a staggered field.
pub fn average_staggered(e: &StaggeredField) -> Vec<f64> {
    let n = e.spec().len() as f64;
    e.components().iter().map(|c| compensated(c.iter().copied()) / n).collect()
}

/// `‖E‖_h = sqrt(ΔV Σ components²)`.
pub fn norm_h(e: &StaggeredField) -> f64 {
    let s = compensated(e.components().iter().flatten().map(|v| v * v));
    (e.spec().cell_volume() * s).sqrt()
}

/// `E = −∇_h φ`, i.e. `E_a(p) = (φ_p − φ_{p+e_a}) / h_a`.
pub fn neg_gradient(phi: &NodeField) -> StaggeredField {
    let spec = phi.spec();
    let v = phi.values();
    let comp = (0..spec.dim())
        .map(|a| {
            let h = spec.h(a);
            (0..spec.len())
                .map(|n| {
                    let c = spec.coords(n);
                    (v[n] - v[spec.fwd(n, c[a], a)]) / h
                })
                .collect()
        })
        .collect();
    StaggeredField { spec: spec.clone(), comp }
}
