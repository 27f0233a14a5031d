//! Closed-form single-mode Gaussian state algebra.
//!
//! Covariances use the convention in which the vacuum is the identity, so a
//! homodyne quadrature measured at phase `theta` has variance
//! `variance_curve(theta) / 2` and the uncertainty principle reads
//! `det(sigma) >= 1`.
//!
//! Rotations follow `R(theta) = [[cos, -sin], [sin, cos]]` and act as
//! `sigma -> R^T sigma R`, so `rotate_covariance(sigma, theta).xx` is the
//! (doubled) quadrature variance at phase `theta`. A state whose minimum
//! variance sits at `theta0` is `R(theta0) diag(sxx, spp) R(theta0)^T`; see
//! [`DiagonalCovariance::to_covariance`].

use std::f64::consts::{LN_10, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on `det(sigma) - 1` used by every physicality test.
pub const PHYSICAL_TOL: f64 = 1e-12;

/// Real symmetric 2x2 second-moment matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceMatrix {
    pub xx: f64,
    pub pp: f64,
    pub xp: f64,
}

impl CovarianceMatrix {
    /// Builds a covariance matrix, rejecting non-finite entries and
    /// non-positive variances.
    pub fn new(xx: f64, pp: f64, xp: f64) -> Result<Self> {
        if !(xx.is_finite() && pp.is_finite() && xp.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite covariance entries ({xx}, {pp}, {xp})"
            )));
        }
        if xx <= 0.0 || pp <= 0.0 {
            return Err(Error::invalid(format!(
                "variances must be positive, got xx = {xx}, pp = {pp}"
            )));
        }
        Ok(Self { xx, pp, xp })
    }

    pub const fn identity() -> Self {
        Self {
            xx: 1.0,
            pp: 1.0,
            xp: 0.0,
        }
    }

    pub const fn scaled_identity(v: f64) -> Self {
        Self {
            xx: v,
            pp: v,
            xp: 0.0,
        }
    }

    pub const fn diagonal(xx: f64, pp: f64) -> Self {
        Self { xx, pp, xp: 0.0 }
    }

    pub fn det(&self) -> f64 {
        self.xx * self.pp - self.xp * self.xp
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.pp
    }

    pub fn is_physical(&self) -> bool {
        is_physical(self)
    }

    pub fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.pp.is_finite() && self.xp.is_finite()
    }

    pub(crate) fn add(&self, other: &Self) -> Self {
        Self {
            xx: self.xx + other.xx,
            pp: self.pp + other.pp,
            xp: self.xp + other.xp,
        }
    }

    pub(crate) fn scale(&self, k: f64) -> Self {
        Self {
            xx: k * self.xx,
            pp: k * self.pp,
            xp: k * self.xp,
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (self.xx - other.xx)
            .abs()
            .max((self.pp - other.pp).abs())
            .max((self.xp - other.xp).abs())
    }
}

/// Eigen-form of a covariance matrix: minimum and maximum variance plus the
/// phase of the minimum-variance quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagonalCovariance {
    pub sxx: f64,
    pub spp: f64,
    /// Minimum-variance phase, in `[0, pi)`.
    pub theta0: f64,
}

impl DiagonalCovariance {
    pub fn new(sxx: f64, spp: f64, theta0: f64) -> Result<Self> {
        if !(sxx.is_finite() && spp.is_finite() && theta0.is_finite()) {
            return Err(Error::invalid("non-finite diagonal covariance"));
        }
        if sxx <= 0.0 || spp < sxx {
            return Err(Error::invalid(format!(
                "need 0 < sxx <= spp, got sxx = {sxx}, spp = {spp}"
            )));
        }
        Ok(Self {
            sxx,
            spp,
            theta0: fold_angle(theta0),
        })
    }

    pub fn det(&self) -> f64 {
        self.sxx * self.spp
    }

    pub fn is_physical(&self) -> bool {
        self.sxx > 0.0 && self.spp > 0.0 && self.det() >= 1.0 - PHYSICAL_TOL
    }

    /// Full covariance `R(theta0) diag(sxx, spp) R(theta0)^T`, whose
    /// minimum-variance phase is `theta0`.
    pub fn to_covariance(&self) -> CovarianceMatrix {
        rotate_covariance(
            &CovarianceMatrix::diagonal(self.sxx, self.spp),
            -self.theta0,
        )
    }

    /// `(SQ, ASQ)` in dB relative to vacuum.
    pub fn sq_asq(&self) -> (f64, f64) {
        sq_asq(self)
    }
}

/// Parameters of the two-component noisy squeezed state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateParams {
    /// Squeezing parameter (dimensionless, >= 0).
    pub r: f64,
    /// Mean thermal photon number shared by both components.
    pub n: f64,
    /// Squeezing phase in `[0, pi]`.
    pub phi: f64,
    /// Weight of the thermal component, in `[0, 0.5]`.
    pub epsilon: f64,
}

impl StateParams {
    pub fn new(r: f64, n: f64, phi: f64, epsilon: f64) -> Result<Self> {
        let p = Self { r, n, phi, epsilon };
        p.validate()?;
        Ok(p)
    }

    /// Pure squeezed vacuum with the given squeezing parameter and phase.
    pub fn squeezed_vacuum(r: f64, phi: f64) -> Result<Self> {
        Self::new(r, 0.0, phi, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let Self { r, n, phi, epsilon } = *self;
        if !(r.is_finite() && n.is_finite() && phi.is_finite() && epsilon.is_finite()) {
            return Err(Error::invalid("non-finite state parameters"));
        }
        if r < 0.0 {
            return Err(Error::invalid(format!("r must be >= 0, got {r}")));
        }
        if n < 0.0 {
            return Err(Error::invalid(format!("n must be >= 0, got {n}")));
        }
        if !(0.0..=PI).contains(&phi) {
            return Err(Error::invalid(format!(
                "phi must lie in [0, pi], got {phi}"
            )));
        }
        if !(0.0..=0.5).contains(&epsilon) {
            return Err(Error::invalid(format!(
                "epsilon must lie in [0, 0.5], got {epsilon}"
            )));
        }
        Ok(())
    }

    /// Minimum-variance phase `phi / 2`.
    pub fn theta0(&self) -> f64 {
        self.phi / 2.0
    }

    /// Thermal variance factor `2n + 1`.
    pub fn thermal_factor(&self) -> f64 {
        2.0 * self.n + 1.0
    }
}

/// Symmetric 2x2 matrix `tau = sigma + A` with
/// `A = diag(-(sigma_xx + 1) / (sigma_pp + 1), 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauMatrix {
    pub xx: f64,
    pub pp: f64,
    pub xp: f64,
}

impl TauMatrix {
    pub fn det(&self) -> f64 {
        self.xx * self.pp - self.xp * self.xp
    }

    pub fn is_positive_definite(&self) -> bool {
        self.xx > 0.0 && self.det() > 0.0
    }
}

/// Lower-triangular Cholesky factor `L` with `tau = L L^T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauFactor {
    pub l11: f64,
    pub l21: f64,
    pub l22: f64,
}

impl TauFactor {
    pub fn diagonal(l11: f64, l22: f64) -> Self {
        Self { l11, l21: 0.0, l22 }
    }

    pub fn to_tau(&self) -> TauMatrix {
        TauMatrix {
            xx: self.l11 * self.l11,
            pp: self.l21 * self.l21 + self.l22 * self.l22,
            xp: self.l11 * self.l21,
        }
    }
}

/// Folds an angle into `[0, pi)`.
pub fn fold_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    // rem_euclid can round up to exactly pi for tiny negative inputs
    if t >= PI {
        0.0
    } else {
        t
    }
}

/// Covariance of the squeezed thermal component; ignores `epsilon`.
pub fn squeezed_thermal_covariance(params: &StateParams) -> CovarianceMatrix {
    let k = params.thermal_factor();
    DiagonalCovariance {
        sxx: k * (-2.0 * params.r).exp(),
        spp: k * (2.0 * params.r).exp(),
        theta0: params.theta0(),
    }
    .to_covariance()
}

/// Second-moment covariance of the zero-mean mixture
/// `(1 - eps) * squeezed_thermal + eps * thermal`.
pub fn mixture_covariance(params: &StateParams) -> CovarianceMatrix {
    let eps = params.epsilon;
    let squeezed = squeezed_thermal_covariance(params).scale(1.0 - eps);
    let thermal = CovarianceMatrix::scaled_identity(eps * params.thermal_factor());
    squeezed.add(&thermal)
}

/// `R(theta)^T sigma R(theta)`.
pub fn rotate_covariance(sigma: &CovarianceMatrix, theta: f64) -> CovarianceMatrix {
    let (s, c) = theta.sin_cos();
    let CovarianceMatrix { xx, pp, xp } = *sigma;
    CovarianceMatrix {
        xx: c * c * xx + 2.0 * c * s * xp + s * s * pp,
        pp: s * s * xx - 2.0 * c * s * xp + c * c * pp,
        xp: c * s * (pp - xx) + (c * c - s * s) * xp,
    }
}

/// Eigen-decomposition into minimum/maximum variance and the
/// minimum-variance phase. Isotropic input yields `theta0 = 0`.
pub fn diagonalize(sigma: &CovarianceMatrix) -> DiagonalCovariance {
    let mean = 0.5 * (sigma.xx + sigma.pp);
    let half_diff = 0.5 * (sigma.xx - sigma.pp);
    let radius = half_diff.hypot(sigma.xp);
    let theta0 = if radius <= 1e-14 * mean.abs() {
        0.0
    } else {
        fold_angle(0.5 * (-sigma.xp).atan2(-half_diff))
    };
    DiagonalCovariance {
        sxx: mean - radius,
        spp: mean + radius,
        theta0,
    }
}

/// `(1 - eps)(2n+1)[e^{-2r} cos^2(theta - theta0) + e^{2r} sin^2(theta - theta0)] + eps(2n+1)`.
pub fn variance_curve(params: &StateParams, theta: f64) -> f64 {
    let k = params.thermal_factor();
    let eps = params.epsilon;
    (1.0 - eps) * squeezed_component_variance(params, theta) + eps * k
}

/// Variance (doubled convention) of the squeezed thermal component at `theta`.
pub fn squeezed_component_variance(params: &StateParams, theta: f64) -> f64 {
    let (s, c) = (theta - params.theta0()).sin_cos();
    params.thermal_factor() * ((-2.0 * params.r).exp() * c * c + (2.0 * params.r).exp() * s * s)
}

pub fn is_physical(sigma: &CovarianceMatrix) -> bool {
    sigma.xx > 0.0 && sigma.pp > 0.0 && sigma.det() >= 1.0 - PHYSICAL_TOL
}

pub fn sigma_to_tau(sigma: &CovarianceMatrix) -> TauMatrix {
    TauMatrix {
        xx: sigma.xx - (sigma.xx + 1.0) / (sigma.pp + 1.0),
        pp: sigma.pp + 1.0,
        xp: sigma.xp,
    }
}

/// Inverts [`sigma_to_tau`]. Requires `tau_pp > 1` so that `sigma_pp > 0`.
pub fn tau_to_sigma(tau: &TauMatrix) -> Result<CovarianceMatrix> {
    if !(tau.xx.is_finite() && tau.pp.is_finite() && tau.xp.is_finite()) {
        return Err(Error::OutOfDomain("non-finite tau".into()));
    }
    if tau.pp <= 1.0 + PHYSICAL_TOL {
        return Err(Error::OutOfDomain(format!(
            "tau_pp = {} must exceed 1",
            tau.pp
        )));
    }
    let sigma_pp = tau.pp - 1.0;
    let sigma_xx = (tau.xx * tau.pp + 1.0) / sigma_pp;
    if sigma_xx <= 0.0 {
        return Err(Error::OutOfDomain(format!(
            "tau_xx = {} yields non-positive sigma_xx",
            tau.xx
        )));
    }
    Ok(CovarianceMatrix {
        xx: sigma_xx,
        pp: sigma_pp,
        xp: tau.xp,
    })
}

pub fn cholesky_to_sigma(factor: &TauFactor) -> Result<CovarianceMatrix> {
    if !(factor.l11 > 0.0 && factor.l22 > 0.0) {
        return Err(Error::OutOfDomain(format!(
            "Cholesky diagonal must be positive, got l11 = {}, l22 = {}",
            factor.l11, factor.l22
        )));
    }
    tau_to_sigma(&factor.to_tau())
}

/// Squeezing and anti-squeezing levels in dB.
pub fn sq_asq(diag: &DiagonalCovariance) -> (f64, f64) {
    (10.0 * diag.sxx.log10(), 10.0 * diag.spp.log10())
}

/// `(det sigma)^(-1/2)`.
pub fn purity(sigma: &CovarianceMatrix) -> f64 {
    sigma.det().powf(-0.5)
}

/// Fidelity between two zero-mean single-mode Gaussian states,
/// `2 / (sqrt(D + d) - sqrt(d))` with `D = det(s1 + s2)` and
/// `d = (det s1 - 1)(det s2 - 1)`.
pub fn gaussian_fidelity(sigma: &CovarianceMatrix, sigma0: &CovarianceMatrix) -> Result<f64> {
    for s in [sigma, sigma0] {
        if !s.is_physical() {
            return Err(Error::Unphysical { det: s.det() });
        }
    }
    let big = sigma.add(sigma0).det();
    // boundary states can sit a hair below det = 1
    let small = ((sigma.det() - 1.0).max(0.0)) * ((sigma0.det() - 1.0).max(0.0));
    // 2 / (sqrt(D + d) - sqrt(d)) rewritten without the cancellation
    let f = 2.0 * ((big + small).sqrt() + small.sqrt()) / big;
    Ok(f.min(1.0))
}

/// Converts a pure-state anti-squeezing level in dB to the squeezing parameter.
pub fn db_to_r(level_db: f64) -> f64 {
    level_db * LN_10 / 20.0
}

pub fn r_to_db(r: f64) -> f64 {
    20.0 * r / LN_10
}
