use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("non-positive permittivity {value} at node {index:?}")]
    NonPositivePermittivity { index: Vec<usize>, value: f64 },

    #[error("non-positive permittivity {value} on axis-{axis} edge {index:?}")]
    NonPositiveEdgePermittivity { axis: usize, index: Vec<usize>, value: f64 },

    #[error("grid mismatch between {0} and {1}")]
    SpecMismatch(&'static str, &'static str),

    #[error("charge density mean {mean:e} is not zero (tolerance {tol:e}); enable centering to subtract it")]
    NonZeroMean { mean: f64, tol: f64 },

    #[error("field violates the discrete Gauss law: residual {residual:e} > {tol:e}")]
    GaussViolation { residual: f64, tol: f64 },

    #[error("field is not curl-free enough to integrate: curl {curl:e} > {tol:e}; relax further")]
    CurlTooLarge { curl: f64, tol: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("oracle: {0}")]
    Oracle(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
