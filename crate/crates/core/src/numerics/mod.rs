//! Shared numerical machinery: adaptive quadrature, tabulated monotone
//! functions, Wasserstein distances, and log-log slope fits.

pub mod grid;
pub mod quad;
pub mod slope;
pub mod wasserstein;

pub use grid::{
    inverse_transform_sample, EmpiricalDistribution, Extrapolation, MonotoneGridFunction,
};
pub use quad::{integrate, QuadratureSpec};
pub use slope::{fit_log_slope, SlopeFit};
pub use wasserstein::{
    wasserstein, wasserstein_with_error, QuantileSource, WassersteinEstimate,
    DEFAULT_WASSERSTEIN_GRID,
};
