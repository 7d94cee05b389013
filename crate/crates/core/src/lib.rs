//! Dispersive Maxwell equations with perfectly matched layers as first-order
//! evolutionary systems.
//!
//! - [`matlaw`]: dispersion models and stretching functions in the Laplace domain.
//! - [`certify`]: numeric accretivity and exponential-stability certificates.
//! - [`blocksys`]: per-point block matrices `M0`, `M1` of the ADE systems.
//! - [`tdsim`]: a 1D staggered-grid time-domain solver for those systems.
//! - [`nlsolve`]: weighted norms, nonlinear polarizations and Picard iteration.

pub mod blocksys;
pub mod certify;
pub mod linalg;
pub mod matlaw;
pub mod nlsolve;
pub mod tdsim;
