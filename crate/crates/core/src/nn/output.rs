//! Output activations, covariance reconstruction and the training loss.
//!
//! Raw outputs `(a, b, c)` become `tau_xx = softplus(a) + m`,
//! `tau_pp = 1 + softplus(b) + m'` (softplus inputs clipped at
//! [`MAX_ACTIVATION`]) and `theta0 = pi * logistic(c)`. Inverting
//! the `tau` shift gives a diagonal covariance with
//! `det = tau_xx * tau_pp + 1 > 1` for every finite raw output.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::gaussian::{cholesky_to_sigma, CovarianceMatrix, TauFactor};

/// Margin keeping `tau` strictly inside the invertible domain.
pub const TAU_MARGIN: f64 = 1e-6;

/// Floor on the minimum variance. Caps representable squeezing at 30 dB and
/// keeps the entries of the rotated matrix small enough that `det` is
/// evaluated well above rounding noise.
pub const MIN_VARIANCE: f64 = 1e-3;

/// Upper clip on the softplus inputs. Beyond it the rotated entries are so
/// large that `xx * pp - xp^2` cancels below the true determinant.
pub const MAX_ACTIVATION: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawOutput {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn clipped_softplus(x: f64) -> f64 {
    softplus(x.min(MAX_ACTIVATION))
}

fn clipped_softplus_grad(x: f64) -> f64 {
    if x < MAX_ACTIVATION {
        logistic(x)
    } else {
        0.0
    }
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Diagonal Cholesky factor of `tau` and the alignment angle.
pub fn raw_to_state(raw: &RawOutput) -> (TauFactor, f64) {
    let tau_xx = clipped_softplus(raw.a) + TAU_MARGIN;
    let tau_pp = 1.0 + clipped_softplus(raw.b) + MIN_VARIANCE;
    let theta0 = PI * logistic(raw.c);
    (TauFactor::diagonal(tau_xx.sqrt(), tau_pp.sqrt()), theta0)
}

/// Forward quantities of the output head for one sample.
#[derive(Debug, Clone, Copy)]
pub(crate) struct HeadState {
    tau_xx: f64,
    sigma_pp: f64,
    sigma_xx: f64,
    theta: f64,
    pub sigma: CovarianceMatrix,
}

impl HeadState {
    pub fn new(raw: &RawOutput) -> Self {
        let tau_xx = clipped_softplus(raw.a) + TAU_MARGIN;
        let sigma_pp = clipped_softplus(raw.b) + MIN_VARIANCE;
        // (tau_xx * tau_pp + 1) / (tau_pp - 1) with tau_pp = sigma_pp + 1
        let sigma_xx = tau_xx + (tau_xx + 1.0) / sigma_pp;
        let theta = PI * logistic(raw.c);
        Self {
            tau_xx,
            sigma_pp,
            sigma_xx,
            theta,
            sigma: rotate_diag(sigma_xx, sigma_pp, theta),
        }
    }

    /// Gradient of a scalar with respect to `(a, b, c)` given its gradient
    /// with respect to the covariance entries.
    pub fn backward(&self, raw: &RawOutput, g: &CovarianceMatrix) -> RawOutput {
        let (s2, c2) = (2.0 * self.theta).sin_cos();
        let cos_sq = 0.5 * (1.0 + c2);
        let sin_sq = 0.5 * (1.0 - c2);
        let half_sc = 0.5 * s2;
        let d_sxx = g.xx * cos_sq + g.pp * sin_sq + g.xp * half_sc;
        let d_spp = g.xx * sin_sq + g.pp * cos_sq - g.xp * half_sc;
        let gap = self.sigma_xx - self.sigma_pp;
        let d_theta = gap * (-g.xx * s2 + g.pp * s2 + g.xp * c2);

        let tau_pp = self.sigma_pp + 1.0;
        let d_tau_xx = d_sxx * tau_pp / self.sigma_pp;
        let d_spp_total = d_spp - d_sxx * (self.tau_xx + 1.0) / (self.sigma_pp * self.sigma_pp);
        let lc = logistic(raw.c);
        RawOutput {
            a: d_tau_xx * clipped_softplus_grad(raw.a),
            b: d_spp_total * clipped_softplus_grad(raw.b),
            c: d_theta * PI * lc * (1.0 - lc),
        }
    }
}

/// `R(theta) diag(d1, d2) R(theta)^T`.
fn rotate_diag(d1: f64, d2: f64, theta: f64) -> CovarianceMatrix {
    let (s2, c2) = (2.0 * theta).sin_cos();
    let mean = 0.5 * (d1 + d2);
    let half = 0.5 * (d1 - d2);
    CovarianceMatrix {
        xx: mean + half * c2,
        pp: mean - half * c2,
        xp: half * s2,
    }
}

/// Full covariance predicted from raw outputs; always physical.
pub fn raw_to_sigma(raw: &RawOutput) -> CovarianceMatrix {
    HeadState::new(raw).sigma
}

/// Same result as [`raw_to_sigma`] but routed through the general
/// Cholesky inversion in [`crate::gaussian`].
pub fn raw_to_sigma_via_cholesky(raw: &RawOutput) -> CovarianceMatrix {
    let (factor, theta0) = raw_to_state(raw);
    let diag = cholesky_to_sigma(&factor).expect("activations keep tau_pp > 1");
    rotate_diag(diag.xx, diag.pp, theta0)
}

/// Mean squared difference over `(xx, pp, xp)`.
pub fn loss(predicted: &CovarianceMatrix, target: &CovarianceMatrix) -> f64 {
    ((predicted.xx - target.xx).powi(2)
        + (predicted.pp - target.pp).powi(2)
        + (predicted.xp - target.xp).powi(2))
        / 3.0
}

/// Gradient of [`loss`] with respect to the predicted entries.
pub(crate) fn loss_grad(
    predicted: &CovarianceMatrix,
    target: &CovarianceMatrix,
) -> CovarianceMatrix {
    CovarianceMatrix {
        xx: 2.0 * (predicted.xx - target.xx) / 3.0,
        pp: 2.0 * (predicted.pp - target.pp) / 3.0,
        xp: 2.0 * (predicted.xp - target.xp) / 3.0,
    }
}
