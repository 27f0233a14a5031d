//! Common interface over the direct and network estimators.

use crate::error::Result;
use crate::gaussian::CovarianceMatrix;
use crate::homodyne::QuadratureSequence;

/// Anything that maps a quadrature record to a covariance matrix.
pub trait CovarianceEstimator: Sync {
    fn estimate_covariance(&self, seq: &QuadratureSequence) -> Result<CovarianceMatrix>;

    fn name(&self) -> &str {
        "custom"
    }
}

impl<F> CovarianceEstimator for F
where
    F: Fn(&QuadratureSequence) -> Result<CovarianceMatrix> + Sync,
{
    fn estimate_covariance(&self, seq: &QuadratureSequence) -> Result<CovarianceMatrix> {
        self(seq)
    }
}
