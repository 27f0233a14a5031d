//! Moment-fit baseline estimator.
//!
//! Quadrature samples are grouped into equal-width phase bins, each bin's
//! variance is doubled into the vacuum-is-one convention, and the curve
//! `V(theta) = u + c cos 2theta + s sin 2theta` is fitted by weighted least
//! squares. The fitted extremes give the eigenvalues and the phase of the
//! minimum gives `theta0`. The result is projected onto `sxx * spp >= 1`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::CovarianceEstimator;
use crate::gaussian::{fold_angle, CovarianceMatrix, DiagonalCovariance};
use crate::homodyne::QuadratureSequence;

/// Bins with fewer points than this are dropped.
pub const MIN_POINTS_PER_BIN: usize = 8;
/// Fewer usable bins than this is an estimation error.
pub const MIN_BINS: usize = 4;
pub const DEFAULT_BINS: usize = 32;
/// Determinant margin added by [`project_physical`].
pub const PROJECTION_MARGIN: f64 = 1e-9;
/// Smallest eigenvalue accepted before projection, relative to the larger.
const EIGEN_FLOOR: f64 = 1e-12;
const IRLS_ITERATIONS: usize = 4;

/// Doubled sample variance of one phase bin.
///
/// `cos2_mean`/`sin2_mean` are the in-bin averages of `cos 2theta` and
/// `sin 2theta`: the expected sample variance is exactly linear in them,
/// which keeps the fit unbiased even when the curve changes inside a bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceBin {
    pub theta_center: f64,
    pub variance: f64,
    pub weight: f64,
    pub cos2_mean: f64,
    pub sin2_mean: f64,
}

impl VarianceBin {
    /// A bin evaluated at a single phase.
    pub fn at(theta: f64, variance: f64, weight: f64) -> Self {
        let (s, c) = (2.0 * theta).sin_cos();
        Self {
            theta_center: theta,
            variance,
            weight,
            cos2_mean: c,
            sin2_mean: s,
        }
    }
}

/// Weighting of bins in the curve fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Weighting {
    /// Weight proportional to the number of points in the bin.
    Count,
    /// Iteratively reweighted by `count / V_model^2`, the inverse sampling
    /// variance of a normal variance estimate.
    #[default]
    InverseVariance,
}

/// Fitted sinusoid plus its diagonal form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveFit {
    pub offset: f64,
    pub cos_amp: f64,
    pub sin_amp: f64,
    /// Unweighted RMS of the bin residuals.
    pub residual: f64,
}

impl CurveFit {
    pub fn amplitude(&self) -> f64 {
        self.cos_amp.hypot(self.sin_amp)
    }

    pub fn eval(&self, cos2: f64, sin2: f64) -> f64 {
        self.offset + self.cos_amp * cos2 + self.sin_amp * sin2
    }

    /// `(u - R, u + R, theta0)`. The eigenvalues are not clamped, so the
    /// minimum may be non-positive on noisy data.
    pub fn extremes(&self) -> (f64, f64, f64) {
        let amp = self.amplitude();
        let theta0 = if amp <= 1e-14 * self.offset.abs() {
            0.0
        } else {
            fold_angle(0.5 * (-self.sin_amp).atan2(-self.cos_amp))
        };
        (self.offset - amp, self.offset + amp, theta0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovEstimate {
    pub diag: DiagonalCovariance,
    pub residual: f64,
    pub bins_used: usize,
}

/// Doubled per-bin unbiased sample variances over `n_bins` equal-width bins
/// on `[0, pi]`. Thin bins are dropped.
pub fn binned_variances(seq: &QuadratureSequence, n_bins: usize) -> Result<Vec<VarianceBin>> {
    if n_bins < MIN_BINS {
        return Err(Error::Estimation(format!(
            "need at least {MIN_BINS} bins, got {n_bins}"
        )));
    }
    #[derive(Default, Clone, Copy)]
    struct Acc {
        n: usize,
        sum: f64,
        sum_sq: f64,
        cos2: f64,
        sin2: f64,
    }
    let mut accs = vec![Acc::default(); n_bins];
    for p in seq.points() {
        let idx = ((p.theta / PI * n_bins as f64) as usize).min(n_bins - 1);
        let (s, c) = (2.0 * p.theta).sin_cos();
        let a = &mut accs[idx];
        a.n += 1;
        a.sum += p.x;
        a.sum_sq += p.x * p.x;
        a.cos2 += c;
        a.sin2 += s;
    }
    let bins: Vec<VarianceBin> = accs
        .iter()
        .enumerate()
        .filter(|(_, a)| a.n >= MIN_POINTS_PER_BIN)
        .map(|(i, a)| {
            let n = a.n as f64;
            let mean = a.sum / n;
            let var = ((a.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
            VarianceBin {
                theta_center: PI * (i as f64 + 0.5) / n_bins as f64,
                variance: 2.0 * var,
                weight: n,
                cos2_mean: a.cos2 / n,
                sin2_mean: a.sin2 / n,
            }
        })
        .collect();
    if bins.len() < MIN_BINS {
        return Err(Error::Estimation(format!(
            "only {} bins have at least {MIN_POINTS_PER_BIN} points",
            bins.len()
        )));
    }
    Ok(bins)
}

fn solve_weighted(bins: &[VarianceBin], weights: &[f64]) -> Result<[f64; 3]> {
    let mut a = [[0.0f64; 3]; 3];
    let mut b = [0.0f64; 3];
    for (bin, &w) in bins.iter().zip(weights) {
        let f = [1.0, bin.cos2_mean, bin.sin2_mean];
        for i in 0..3 {
            b[i] += w * f[i] * bin.variance;
            for j in 0..3 {
                a[i][j] += w * f[i] * f[j];
            }
        }
    }
    solve3(a, b).ok_or_else(|| {
        Error::Estimation("singular normal equations (phases do not span the curve)".into())
    })
}

/// Cholesky solve of a symmetric 3x3 system; `None` when not positive definite.
fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let scale = a[0][0].abs().max(a[1][1].abs()).max(a[2][2].abs());
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let mut l = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 1e-12 * scale {
                    return None;
                }
                l[i][i] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    let mut y = [0.0f64; 3];
    for i in 0..3 {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i][k] * y[k];
        }
        y[i] = sum / l[i][i];
    }
    let mut x = [0.0f64; 3];
    for i in (0..3).rev() {
        let mut sum = y[i];
        for k in i + 1..3 {
            sum -= l[k][i] * x[k];
        }
        x[i] = sum / l[i][i];
    }
    Some(x)
}

/// Weighted least-squares fit of `u + c cos 2theta + s sin 2theta`.
pub fn fit_curve(bins: &[VarianceBin], weighting: Weighting) -> Result<CurveFit> {
    if bins.len() < MIN_BINS {
        return Err(Error::Estimation(format!(
            "need at least {MIN_BINS} bins, got {}",
            bins.len()
        )));
    }
    let mut weights: Vec<f64> = bins.iter().map(|b| b.weight).collect();
    let mut coef = solve_weighted(bins, &weights)?;
    if weighting == Weighting::InverseVariance {
        for _ in 0..IRLS_ITERATIONS {
            let model: Vec<f64> = bins
                .iter()
                .map(|b| coef[0] + coef[1] * b.cos2_mean + coef[2] * b.sin2_mean)
                .collect();
            let top = model.iter().cloned().fold(0.0f64, f64::max);
            if !(top > 0.0) {
                break;
            }
            // floor keeps a wildly negative model from producing huge weights
            let floor = 1e-6 * top;
            for ((w, b), m) in weights.iter_mut().zip(bins).zip(&model) {
                let v = m.max(floor);
                *w = b.weight / (v * v);
            }
            coef = solve_weighted(bins, &weights)?;
        }
    }
    let mut fit = CurveFit {
        offset: coef[0],
        cos_amp: coef[1],
        sin_amp: coef[2],
        residual: 0.0,
    };
    let ss: f64 = bins
        .iter()
        .map(|b| (b.variance - fit.eval(b.cos2_mean, b.sin2_mean)).powi(2))
        .sum();
    fit.residual = (ss / bins.len() as f64).sqrt();
    Ok(fit)
}

/// Fits the curve and returns its diagonal form. Fails when the fitted
/// minimum is not positive; [`estimate`] floors it instead.
pub fn fit_variance_curve(
    bins: &[VarianceBin],
    weighting: Weighting,
) -> Result<DiagonalCovariance> {
    let fit = fit_curve(bins, weighting)?;
    let (sxx, spp, theta0) = fit.extremes();
    if !(sxx > 0.0) {
        return Err(Error::Estimation(format!(
            "fitted minimum variance {sxx} is not positive"
        )));
    }
    Ok(DiagonalCovariance { sxx, spp, theta0 })
}

/// Scales both eigenvalues up to `det = 1 + margin` when below the
/// uncertainty bound; physical input is returned unchanged.
pub fn project_physical(diag: &DiagonalCovariance) -> Result<DiagonalCovariance> {
    if !(diag.sxx > 0.0 && diag.spp > 0.0) || !diag.sxx.is_finite() || !diag.spp.is_finite() {
        return Err(Error::invalid(format!(
            "projection needs positive eigenvalues, got ({}, {})",
            diag.sxx, diag.spp
        )));
    }
    let det = diag.sxx * diag.spp;
    if det >= 1.0 {
        return Ok(*diag);
    }
    let k = ((1.0 + PROJECTION_MARGIN) / det).sqrt();
    Ok(DiagonalCovariance {
        sxx: k * diag.sxx,
        spp: k * diag.spp,
        theta0: diag.theta0,
    })
}

/// Binned fit followed by physical projection.
pub fn estimate(seq: &QuadratureSequence, n_bins: usize) -> Result<CovEstimate> {
    estimate_with(seq, n_bins, Weighting::default())
}

pub fn estimate_with(
    seq: &QuadratureSequence,
    n_bins: usize,
    weighting: Weighting,
) -> Result<CovEstimate> {
    let bins = binned_variances(seq, n_bins)?;
    let fit = fit_curve(&bins, weighting)?;
    let (sxx, spp, theta0) = fit.extremes();
    let tiny = f64::MIN_POSITIVE.sqrt();
    let spp = spp.max(tiny);
    let sxx = sxx.max(EIGEN_FLOOR * spp);
    let diag = project_physical(&DiagonalCovariance { sxx, spp, theta0 })?;
    Ok(CovEstimate {
        diag,
        residual: fit.residual,
        bins_used: bins.len(),
    })
}

/// [`estimate`] packaged as a [`CovarianceEstimator`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectEstimator {
    pub n_bins: usize,
    pub weighting: Weighting,
}

impl Default for DirectEstimator {
    fn default() -> Self {
        Self {
            n_bins: DEFAULT_BINS,
            weighting: Weighting::default(),
        }
    }
}

impl CovarianceEstimator for DirectEstimator {
    fn estimate_covariance(&self, seq: &QuadratureSequence) -> Result<CovarianceMatrix> {
        Ok(estimate_with(seq, self.n_bins, self.weighting)?
            .diag
            .to_covariance())
    }

    fn name(&self) -> &str {
        "direct"
    }
}
