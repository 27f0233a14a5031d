//! Covariance-matrix tomography of noisy single-mode squeezed vacuum.
//!
//! * [`gaussian`]: closed-form 2x2 covariance algebra, the `tau`
//!   parametrization that enforces `det(sigma) >= 1`, and scalar metrics.
//! * [`homodyne`] / [`dataset`]: synthetic quadrature records from the
//!   squeezed-thermal plus thermal mixture, and the `GQST0001` file format.
//! * [`direct`]: binned moment-fit estimator.
//! * [`nn`]: residual 1-D convolutional estimator with hand-written
//!   backpropagation and the `GQNN0001` model format.
//! * [`analysis`]: bootstrap intervals, degradation/purity curves, noise-weight
//!   selection and the fidelity benchmark.

pub mod analysis;
pub mod dataset;
pub mod direct;
pub mod error;
pub mod estimator;
pub mod gaussian;
pub mod homodyne;
pub mod nn;

pub use error::{Error, Result};
pub use estimator::CovarianceEstimator;
pub use gaussian::{CovarianceMatrix, DiagonalCovariance, StateParams, TauFactor, TauMatrix};
pub use homodyne::{QuadraturePoint, QuadratureSequence};
