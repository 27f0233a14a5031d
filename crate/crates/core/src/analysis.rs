//! Bootstrap intervals, degradation and purity curves, noise-weight
//! selection and the fidelity benchmark.

use std::io::Write;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::CovarianceEstimator;
use crate::gaussian::{
    diagonalize, gaussian_fidelity, mixture_covariance, purity, CovarianceMatrix, StateParams,
};
use crate::homodyne::{
    derive_seed, generate_sequence, DatasetGenerator, DatasetRanges, PhaseScheme,
    QuadratureSequence,
};

/// Squeezing, anti-squeezing (dB) and purity of one estimate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Levels {
    pub sq: f64,
    pub asq: f64,
    pub purity: f64,
}

impl Levels {
    pub fn of(sigma: &CovarianceMatrix) -> Self {
        let (sq, asq) = diagonalize(sigma).sq_asq();
        Self {
            sq,
            asq,
            purity: purity(sigma),
        }
    }

    /// Closed-form levels of the mixture's second-moment covariance.
    pub fn analytic(params: &StateParams) -> Self {
        Self::of(&mixture_covariance(params))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub replicate_count: usize,
    pub points_per_replicate: usize,
    pub replicates: Vec<Levels>,
    pub mean: Levels,
    pub std: Levels,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub points: usize,
    pub seed: u64,
    /// Classic resampling with replacement instead of down-sampling.
    pub with_replacement: bool,
}

impl BootstrapOptions {
    pub fn new(replicates: usize, points: usize, seed: u64) -> Self {
        Self {
            replicates,
            points,
            seed,
            with_replacement: false,
        }
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    // shifted by the first value so a constant series has exactly zero spread
    let n = values.clone().count();
    let shift = values.clone().next().unwrap_or(0.0);
    let mean_d = values.clone().map(|v| v - shift).sum::<f64>() / n as f64;
    if n < 2 {
        return (shift + mean_d, 0.0);
    }
    let var = values.map(|v| (v - shift - mean_d).powi(2)).sum::<f64>() / (n - 1) as f64;
    (shift + mean_d, var.sqrt())
}

fn summarize(replicates: &[Levels]) -> (Levels, Levels) {
    let (sq, sq_s) = mean_std(replicates.iter().map(|l| l.sq));
    let (asq, asq_s) = mean_std(replicates.iter().map(|l| l.asq));
    let (p, p_s) = mean_std(replicates.iter().map(|l| l.purity));
    (
        Levels { sq, asq, purity: p },
        Levels {
            sq: sq_s,
            asq: asq_s,
            purity: p_s,
        },
    )
}

/// Sub-record of `points` samples for replicate `i`; a pure function of
/// `(record, options, i)`.
pub fn subsample(
    record: &QuadratureSequence,
    opts: &BootstrapOptions,
    i: usize,
) -> QuadratureSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, i as u64));
    let n = record.len();
    let mut idx: Vec<usize> = if opts.with_replacement {
        (0..opts.points).map(|_| rng.random_range(0..n)).collect()
    } else {
        index::sample(&mut rng, n, opts.points).into_vec()
    };
    // the record is canonically sorted, so sorted indices keep the order
    idx.sort_unstable();
    let pts = record.points();
    QuadratureSequence::from_sorted_unchecked(idx.into_iter().map(|k| pts[k]).collect())
}

/// Estimates each of `replicates` random sub-records independently
/// (in parallel) and reports mean and sample standard deviation.
pub fn bootstrap<E: CovarianceEstimator + ?Sized>(
    record: &QuadratureSequence,
    opts: &BootstrapOptions,
    estimator: &E,
) -> Result<BootstrapReport> {
    if opts.replicates == 0 {
        return Err(Error::invalid("bootstrap needs at least one replicate"));
    }
    if opts.points < 2 {
        return Err(Error::invalid("replicates need at least 2 points"));
    }
    if !opts.with_replacement && record.len() < opts.points {
        return Err(Error::invalid(format!(
            "record has {} points, fewer than the {} requested per replicate",
            record.len(),
            opts.points
        )));
    }
    let replicates = (0..opts.replicates)
        .into_par_iter()
        .map(|i| {
            Ok(Levels::of(
                &estimator.estimate_covariance(&subsample(record, opts, i))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mean, std) = summarize(&replicates);
    Ok(BootstrapReport {
        replicate_count: opts.replicates,
        points_per_replicate: opts.points,
        replicates,
        mean,
        std,
    })
}

/// One point of a degradation or purity curve: bootstrap mean and spread of
/// the estimate plus the analytic truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    #[serde(rename = "ASQ")]
    pub asq: f64,
    #[serde(rename = "ASQ_std")]
    pub asq_std: f64,
    #[serde(rename = "SQ")]
    pub sq: f64,
    #[serde(rename = "SQ_std")]
    pub sq_std: f64,
    pub purity: f64,
    pub purity_std: f64,
    #[serde(rename = "ASQ_true")]
    pub asq_true: f64,
    #[serde(rename = "SQ_true")]
    pub sq_true: f64,
    pub purity_true: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveOptions {
    /// Length of the simulated record per state.
    pub samples_per_state: usize,
    pub replicates: usize,
    pub points_per_replicate: usize,
    pub seed: u64,
}

impl CurveOptions {
    pub fn new(samples_per_state: usize, seed: u64) -> Self {
        Self {
            samples_per_state,
            replicates: 20,
            points_per_replicate: 2048,
            seed,
        }
    }
}

fn curve_point<E: CovarianceEstimator + ?Sized>(
    estimator: &E,
    params: &StateParams,
    opts: &CurveOptions,
    k: usize,
) -> Result<CurvePoint> {
    let record = generate_sequence(
        params,
        opts.samples_per_state,
        PhaseScheme::UniformRandom,
        derive_seed(opts.seed, k as u64),
    )?;
    let boot = BootstrapOptions::new(
        opts.replicates,
        opts.points_per_replicate,
        derive_seed(opts.seed ^ 0x5EED, k as u64),
    );
    let rep = bootstrap(&record, &boot, estimator)?;
    let truth = Levels::analytic(params);
    Ok(CurvePoint {
        asq: rep.mean.asq,
        asq_std: rep.std.asq,
        sq: rep.mean.sq,
        sq_std: rep.std.sq,
        purity: rep.mean.purity,
        purity_std: rep.std.purity,
        asq_true: truth.asq,
        sq_true: truth.sq,
        purity_true: truth.purity,
    })
}

/// SQ against ASQ for each state, in input order.
pub fn degradation_curve<E: CovarianceEstimator + ?Sized>(
    estimator: &E,
    states: &[StateParams],
    opts: &CurveOptions,
) -> Result<Vec<CurvePoint>> {
    states
        .iter()
        .enumerate()
        .map(|(k, p)| curve_point(estimator, p, opts, k))
        .collect()
}

/// Purity against ASQ, ordered by analytic ASQ.
pub fn purity_curve<E: CovarianceEstimator + ?Sized>(
    estimator: &E,
    states: &[StateParams],
    opts: &CurveOptions,
) -> Result<Vec<CurvePoint>> {
    let mut pts = degradation_curve(estimator, states, opts)?;
    pts.sort_by(|a, b| a.asq_true.total_cmp(&b.asq_true));
    Ok(pts)
}

pub fn write_degradation_csv<W: Write>(points: &[CurvePoint], mut out: W) -> Result<()> {
    writeln!(out, "ASQ,SQ,SQ_std,purity,purity_std,ASQ_true,SQ_true")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.asq, p.sq, p.sq_std, p.purity, p.purity_std, p.asq_true, p.sq_true
        )?;
    }
    Ok(())
}

pub fn write_purity_csv<W: Write>(points: &[CurvePoint], mut out: W) -> Result<()> {
    writeln!(out, "ASQ,ASQ_std,purity,purity_std,ASQ_true,purity_true")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            p.asq, p.asq_std, p.purity, p.purity_std, p.asq_true, p.purity_true
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub epsilon_grid: Vec<f64>,
    /// Mean squared (SQ, ASQ) deviation per grid point, dB^2.
    pub mse_values: Vec<f64>,
    pub best_epsilon: f64,
}

impl SelectionResult {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epsilon,mse")?;
        for (e, m) in self.epsilon_grid.iter().zip(&self.mse_values) {
            writeln!(out, "{e},{m}")?;
        }
        Ok(())
    }
}

/// Argmin of `mse_values`, ties going to the smaller epsilon.
pub fn select_from_mse(epsilon_grid: &[f64], mse_values: &[f64]) -> Result<SelectionResult> {
    if epsilon_grid.len() != mse_values.len() {
        return Err(Error::Shape(format!(
            "{} grid points but {} MSE values",
            epsilon_grid.len(),
            mse_values.len()
        )));
    }
    if epsilon_grid.is_empty() {
        return Err(Error::invalid("empty epsilon grid"));
    }
    if mse_values.iter().any(|m| m.is_nan()) {
        return Err(Error::invalid("MSE values must not be NaN"));
    }
    let best = (0..epsilon_grid.len())
        .min_by(|&i, &j| {
            mse_values[i]
                .total_cmp(&mse_values[j])
                .then(epsilon_grid[i].total_cmp(&epsilon_grid[j]))
        })
        .expect("non-empty grid");
    Ok(SelectionResult {
        epsilon_grid: epsilon_grid.to_vec(),
        mse_values: mse_values.to_vec(),
        best_epsilon: epsilon_grid[best],
    })
}

/// Mean squared deviation over both coordinates of `(SQ, ASQ)` pairs.
pub fn level_mse(predicted: &[(f64, f64)], reference: &[(f64, f64)]) -> Result<f64> {
    if predicted.len() != reference.len() {
        return Err(Error::Shape(format!(
            "{} predictions but {} reference points",
            predicted.len(),
            reference.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::invalid("no points to compare"));
    }
    let sum: f64 = predicted
        .iter()
        .zip(reference)
        .map(|(p, r)| (p.0 - r.0).powi(2) + (p.1 - r.1).powi(2))
        .sum();
    Ok(sum / (2 * predicted.len()) as f64)
}

/// Picks the noise weight whose model predictions best match `reference`.
pub fn select_epsilon(
    per_model: &[(f64, Vec<(f64, f64)>)],
    reference: &[(f64, f64)],
) -> Result<SelectionResult> {
    let grid: Vec<f64> = per_model.iter().map(|(e, _)| *e).collect();
    let mse = per_model
        .iter()
        .map(|(_, preds)| level_mse(preds, reference))
        .collect::<Result<Vec<_>>>()?;
    select_from_mse(&grid, &mse)
}

/// Synthetic stand-in for an experimental pump-power sweep: states with
/// known squeezing parameters, a shared thermal occupation and noise weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoExperiment {
    pub r_values: Vec<f64>,
    pub n: f64,
    pub epsilon: f64,
    pub points_per_state: usize,
}

impl PseudoExperiment {
    /// Measured `(SQ, ASQ)` per state from one simulated record each.
    pub fn measure<E: CovarianceEstimator + ?Sized>(
        &self,
        estimator: &E,
        seed: u64,
    ) -> Result<Vec<(f64, f64)>> {
        self.r_values
            .par_iter()
            .enumerate()
            .map(|(k, &r)| {
                let p = StateParams::new(r, self.n, 0.0, self.epsilon)?;
                let seq = generate_sequence(
                    &p,
                    self.points_per_state,
                    PhaseScheme::UniformRandom,
                    derive_seed(seed, k as u64),
                )?;
                let l = Levels::of(&estimator.estimate_covariance(&seq)?);
                Ok((l.sq, l.asq))
            })
            .collect()
    }
}

/// Two-component model at fixed `epsilon`: predicted `(SQ, ASQ)` for each
/// squeezing parameter with the thermal occupation fitted to `reference`
/// (golden-section search on `[0, n_max]`). Returns `(n, predictions)`.
pub fn fit_model_at_epsilon(
    r_values: &[f64],
    epsilon: f64,
    reference: &[(f64, f64)],
    n_max: f64,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let predict = |n: f64| -> Result<Vec<(f64, f64)>> {
        r_values
            .iter()
            .map(|&r| {
                let l = Levels::analytic(&StateParams::new(r, n, 0.0, epsilon)?);
                Ok((l.sq, l.asq))
            })
            .collect()
    };
    let cost = |n: f64| -> Result<f64> { level_mse(&predict(n)?, reference) };
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, n_max);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (cost(c)?, cost(d)?);
    while b - a > 1e-9 * n_max.max(1.0) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = cost(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = cost(d)?;
        }
    }
    let mut n = 0.5 * (a + b);
    // the boundary is not covered by the interior probes
    if cost(0.0)? < cost(n)? {
        n = 0.0;
    }
    Ok((n, predict(n)?))
}

/// One selection trial: measure the pseudo-experiment, fit the model at
/// every grid point and select the best noise weight.
pub fn model_selection_trial<E: CovarianceEstimator + ?Sized>(
    experiment: &PseudoExperiment,
    grid: &[f64],
    estimator: &E,
    seed: u64,
) -> Result<SelectionResult> {
    let reference = experiment.measure(estimator, seed)?;
    let per_model = grid
        .iter()
        .map(|&eps| {
            Ok((
                eps,
                fit_model_at_epsilon(&experiment.r_values, eps, &reference, 2.0)?.1,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    select_epsilon(&per_model, &reference)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub index: u64,
    pub r: f64,
    pub n: f64,
    pub phi: f64,
    pub epsilon: f64,
    #[serde(rename = "F")]
    pub fidelity: f64,
    #[serde(rename = "SQ_true")]
    pub sq_true: f64,
    #[serde(rename = "SQ")]
    pub sq: f64,
    #[serde(rename = "ASQ_true")]
    pub asq_true: f64,
    #[serde(rename = "ASQ")]
    pub asq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    #[serde(rename = "mean_F")]
    pub mean_fidelity: f64,
    #[serde(rename = "var_F")]
    pub var_fidelity: f64,
    pub histogram: Vec<HistogramBin>,
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkReport {
    /// Mean absolute SQ error in dB.
    pub fn sq_mae(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.sq - r.sq_true).abs())
            .sum::<f64>()
            / self.rows.len() as f64
    }

    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "mean_F,var_F")?;
        writeln!(out, "{},{}", self.mean_fidelity, self.var_fidelity)?;
        Ok(())
    }

    pub fn write_rows_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "index,r,n,phi,epsilon,F,SQ_true,SQ,ASQ_true,ASQ")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.index, r.r, r.n, r.phi, r.epsilon, r.fidelity, r.sq_true, r.sq, r.asq_true, r.asq
            )?;
        }
        Ok(())
    }
}

pub const HISTOGRAM_BINS: usize = 50;

/// Fidelity between the estimate from one `points`-sample record and the
/// mixture's second-moment Gaussian, over `count` random states.
pub fn fidelity_benchmark<E: CovarianceEstimator + ?Sized>(
    estimator: &E,
    count: u64,
    ranges: DatasetRanges,
    points: usize,
    seed: u64,
) -> Result<BenchmarkReport> {
    let gen = DatasetGenerator::new(ranges, count, points, seed)?;
    let rows = (0..count)
        .into_par_iter()
        .map(|i| {
            let state = gen.state(i);
            let est = estimator.estimate_covariance(&state.sequence)?;
            let truth = mixture_covariance(&state.params);
            let f = gaussian_fidelity(&est, &truth)?;
            let l = Levels::of(&est);
            let t = Levels::of(&truth);
            Ok(BenchmarkRow {
                index: i,
                r: state.params.r,
                n: state.params.n,
                phi: state.params.phi,
                epsilon: state.params.epsilon,
                fidelity: f,
                sq_true: t.sq,
                sq: l.sq,
                asq_true: t.asq,
                asq: l.asq,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_benchmark(rows))
}

pub fn summarize_benchmark(rows: Vec<BenchmarkRow>) -> BenchmarkReport {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r.fidelity).sum::<f64>() / n;
    let var = rows
        .iter()
        .map(|r| (r.fidelity - mean).powi(2))
        .sum::<f64>()
        / n;
    let width = 1.0 / HISTOGRAM_BINS as f64;
    let mut histogram: Vec<HistogramBin> = (0..HISTOGRAM_BINS)
        .map(|k| HistogramBin {
            lo: k as f64 * width,
            hi: (k + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for r in &rows {
        let k = ((r.fidelity / width) as usize).min(HISTOGRAM_BINS - 1);
        histogram[k].count += 1;
    }
    BenchmarkReport {
        mean_fidelity: mean,
        var_fidelity: var,
        histogram,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::direct::DirectEstimator;
    use crate::homodyne::Range;

    #[test]
    fn table_row_selects_one_percent() {
        let grid = [0.0, 0.01, 0.02, 0.03, 0.04, 0.05];
        let sel = select_from_mse(&grid, &[0.94, 0.49, 1.17, 6.53, 4.64, 3.91]).unwrap();
        assert_eq!(sel.best_epsilon, 0.01);
        let scaled = select_from_mse(&grid, &[9.4, 4.9, 11.7, 65.3, 46.4, 39.1]).unwrap();
        assert_eq!(scaled.best_epsilon, 0.01);
        let tie = select_from_mse(&[0.03, 0.01, 0.02], &[1.0, 1.0, 2.0]).unwrap();
        assert_eq!(tie.best_epsilon, 0.01);
        assert!(matches!(
            select_from_mse(&grid, &[1.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn identical_predictions_select_smallest() {
        let reference = vec![(-3.0, 4.0), (-6.0, 8.0)];
        let per_model: Vec<_> = [0.02, 0.0, 0.01]
            .iter()
            .map(|&e| (e, reference.clone()))
            .collect();
        let sel = select_epsilon(&per_model, &reference).unwrap();
        assert_eq!(sel.best_epsilon, 0.0);
        assert!(sel.mse_values.iter().all(|&m| m == 0.0));
        assert!(select_epsilon(&[(0.0, vec![(0.0, 0.0)])], &reference).is_err());
    }

    #[test]
    fn constant_estimator_has_zero_spread() {
        let p = StateParams::new(0.5, 0.1, 0.3, 0.0).unwrap();
        let record = generate_sequence(&p, 10_000, PhaseScheme::UniformRandom, 1).unwrap();
        let constant = |_: &QuadratureSequence| Ok(CovarianceMatrix::diagonal(0.5, 3.0));
        let rep = bootstrap(&record, &BootstrapOptions::new(50, 2048, 2), &constant).unwrap();
        assert_eq!(rep.replicate_count, 50);
        assert_eq!(rep.std, Levels::default());
    }

    #[test]
    fn bootstrap_is_deterministic_and_checks_length() {
        let p = StateParams::new(0.8, 0.0, 0.0, 0.0).unwrap();
        let record = generate_sequence(&p, 20_000, PhaseScheme::UniformRandom, 4).unwrap();
        let opts = BootstrapOptions::new(30, 2048, 9);
        let a = bootstrap(&record, &opts, &DirectEstimator::default()).unwrap();
        let b = bootstrap(&record, &opts, &DirectEstimator::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.std.sq > 0.0 && a.std.asq > 0.0);
        let short = BootstrapOptions::new(3, 30_000, 9);
        assert!(bootstrap(&record, &short, &DirectEstimator::default()).is_err());
        let replace = BootstrapOptions {
            with_replacement: true,
            ..short
        };
        assert_eq!(
            bootstrap(&record, &replace, &DirectEstimator::default())
                .unwrap()
                .replicate_count,
            3
        );
    }

    #[test]
    fn subsample_is_sorted_and_distinct() {
        let p = StateParams::new(0.3, 0.0, 0.0, 0.0).unwrap();
        let record = generate_sequence(&p, 5000, PhaseScheme::UniformRandom, 4).unwrap();
        let s = subsample(&record, &BootstrapOptions::new(1, 2048, 3), 0);
        assert_eq!(s.len(), 2048);
        let pts = s.points();
        assert!(pts.windows(2).all(|w| w[0].theta < w[1].theta));
    }

    #[test]
    fn oracle_benchmark_is_perfect() {
        let ranges = DatasetRanges::default();
        let gen = DatasetGenerator::new(ranges, 40, 64, 5).unwrap();
        let oracle = move |seq: &QuadratureSequence| {
            let i = (0..40).find(|&i| gen.state(i).sequence == *seq).unwrap();
            Ok(mixture_covariance(&gen.params(i)))
        };
        let rep = fidelity_benchmark(&oracle, 40, ranges, 64, 5).unwrap();
        assert!((rep.mean_fidelity - 1.0).abs() < 1e-12);
        assert!(rep.var_fidelity < 1e-20);
        assert_eq!(rep.histogram.iter().map(|b| b.count).sum::<usize>(), 40);
        assert_eq!(rep.histogram.last().unwrap().count, 40);
    }

    #[test]
    fn curves_carry_analytic_truth() {
        let states: Vec<_> = [0.0, 0.5, 1.0]
            .iter()
            .map(|&r| StateParams::new(r, 0.0, 0.2, 0.0).unwrap())
            .collect();
        let opts = CurveOptions {
            replicates: 5,
            ..CurveOptions::new(8192, 3)
        };
        let pts = degradation_curve(&DirectEstimator::default(), &states, &opts).unwrap();
        for p in &pts {
            assert!((p.sq_true + p.asq_true).abs() < 1e-12);
            assert!((p.purity_true - 1.0).abs() < 1e-12);
            assert!((p.sq + p.asq).abs() < 1.0, "{p:?}");
        }
        let mut buf = Vec::new();
        write_degradation_csv(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("ASQ,SQ,SQ_std,purity,purity_std,ASQ_true,SQ_true\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn fitted_model_recovers_generating_occupation() {
        let rs = [0.3, 0.8, 1.4];
        let reference: Vec<_> = rs
            .iter()
            .map(|&r| {
                let l = Levels::analytic(&StateParams::new(r, 0.25, 0.0, 0.02).unwrap());
                (l.sq, l.asq)
            })
            .collect();
        let (n, preds) = fit_model_at_epsilon(&rs, 0.02, &reference, 2.0).unwrap();
        assert!((n - 0.25).abs() < 1e-6, "{n}");
        assert!(level_mse(&preds, &reference).unwrap() < 1e-12);
        let (n0, _) = fit_model_at_epsilon(&rs, 0.0, &[(0.0, 0.0); 3], 2.0).unwrap();
        assert_eq!(n0, 0.0);
        let _ = Range::point(0.0);
    }
}
