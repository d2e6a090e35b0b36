//! Electrostatics on periodic staggered grids by local curl-free relaxation.
//!
//! The electric field is the unknown. It is initialised to satisfy the
//! discrete Gauss law exactly, then relaxed towards the energy minimiser by
//! circulation updates that never disturb that constraint. Three sweep
//! schedules are provided: single-mesh plaquette sweeps and two hierarchical
//! block schedules (forward and zigzag).
//!
//! Module map:
//! - [`grid`]: grid containers, discrete operators and the energy functional.
//! - [`relax`]: update kernels and sweep schedules.
//! - [`solver`]: problem assembly, initialisation, the outer loop, warm starts.
//! - [`oracle`]: direct and spectral reference solvers.
//! - [`bench`]: manufactured-solution studies and the time-series benchmark.
//! - [`io`]: CSV/JSON formats.
//! - [`cli`]: configuration and command implementations behind the binary.

pub mod bench;
pub mod cli;
pub mod error;
pub mod grid;
pub mod io;
pub mod oracle;
pub mod relax;
pub mod solver;
mod sum;

pub use error::{Error, Result};
pub use grid::{EdgeCoeff, GridSpec, NodeField, StaggeredField};
pub use relax::{RelaxMethod, SweepTrace};
pub use solver::{Problem, SolveReport, SolveStatus, Solution};
