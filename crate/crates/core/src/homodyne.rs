//! Synthetic homodyne records drawn from the two-component noisy state.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{
    db_to_r, diagonalize, mixture_covariance, squeezed_component_variance, DiagonalCovariance,
    StateParams,
};

/// One homodyne sample: quadrature value and local-oscillator phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraturePoint {
    pub x: f64,
    pub theta: f64,
}

/// Measurement record sorted by phase, ties broken by quadrature value.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSequence {
    points: Vec<QuadraturePoint>,
}

impl QuadratureSequence {
    pub fn new(mut points: Vec<QuadraturePoint>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid(format!(
                "a quadrature sequence needs at least 2 points, got {}",
                points.len()
            )));
        }
        for p in &points {
            if !p.x.is_finite() {
                return Err(Error::invalid("non-finite quadrature value"));
            }
            if !(0.0..=PI).contains(&p.theta) {
                return Err(Error::invalid(format!("phase {} outside [0, pi]", p.theta)));
            }
        }
        points.sort_by(|a, b| a.theta.total_cmp(&b.theta).then(a.x.total_cmp(&b.x)));
        Ok(Self { points })
    }

    /// Trusts the caller that points are valid and already canonically sorted.
    pub(crate) fn from_sorted_unchecked(points: Vec<QuadraturePoint>) -> Self {
        Self { points }
    }

    pub fn points(&self) -> &[QuadraturePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<QuadraturePoint> {
        self.points
    }
}

/// How local-oscillator phases are laid out over `[0, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PhaseScheme {
    /// i.i.d. uniform phases.
    #[default]
    UniformRandom,
    /// Equally spaced bin midpoints `pi (k + 1/2) / N`.
    LinearSweep,
}

/// Draws one quadrature value at phase `theta`: thermal component with
/// probability `epsilon`, otherwise the squeezed thermal component; the
/// sample is normal with half the component's doubled-convention variance.
pub fn sample_point<R: Rng + ?Sized>(params: &StateParams, theta: f64, rng: &mut R) -> f64 {
    let thermal = params.epsilon > 0.0 && rng.random::<f64>() < params.epsilon;
    let variance = if thermal {
        params.thermal_factor()
    } else {
        squeezed_component_variance(params, theta)
    };
    let z: f64 = rng.sample(StandardNormal);
    z * (0.5 * variance).sqrt()
}

/// Deterministic record of `n_points` samples.
pub fn generate_sequence(
    params: &StateParams,
    n_points: usize,
    scheme: PhaseScheme,
    seed: u64,
) -> Result<QuadratureSequence> {
    params.validate()?;
    if n_points < 2 {
        return Err(Error::invalid("n_points must be >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut thetas: Vec<f64> = match scheme {
        PhaseScheme::UniformRandom => (0..n_points).map(|_| PI * rng.random::<f64>()).collect(),
        PhaseScheme::LinearSweep => (0..n_points)
            .map(|k| PI * (k as f64 + 0.5) / n_points as f64)
            .collect(),
    };
    thetas.sort_by(f64::total_cmp);
    let points = thetas
        .into_iter()
        .map(|theta| QuadraturePoint {
            x: sample_point(params, theta, &mut rng),
            theta,
        })
        .collect();
    // equal phases are measure-zero for the random scheme and absent for the
    // sweep, but keep the canonical (theta, x) order regardless
    QuadratureSequence::new(points)
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-item seed: `splitmix64(seed ^ splitmix64(index))`. Depends only on
/// `(seed, index)` so generation order and thread count never matter.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

/// Closed interval sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub const fn point(v: f64) -> Self {
        Self { min: v, max: v }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.min + (self.max - self.min) * rng.random::<f64>()
    }

    fn check(&self, name: &str, lo: f64, hi: f64) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.min > self.max {
            return Err(Error::invalid(format!(
                "{name} range [{}, {}] is not a valid interval",
                self.min, self.max
            )));
        }
        if self.min < lo || self.max > hi {
            return Err(Error::invalid(format!(
                "{name} range [{}, {}] must lie within [{lo}, {hi}]",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

/// Parameter ranges for synthetic datasets. Squeezing is drawn in dB and
/// converted with [`db_to_r`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetRanges {
    pub r_db: Range,
    pub n: Range,
    pub phi: Range,
    pub epsilon: Range,
}

impl Default for DatasetRanges {
    fn default() -> Self {
        Self {
            r_db: Range::new(0.0, 15.0),
            n: Range::new(0.0, 1.0),
            phi: Range::new(0.0, PI),
            epsilon: Range::new(0.0, 0.05),
        }
    }
}

impl DatasetRanges {
    pub fn validate(&self) -> Result<()> {
        self.r_db.check("r_db", 0.0, f64::INFINITY)?;
        self.n.check("n", 0.0, f64::INFINITY)?;
        self.phi.check("phi", 0.0, PI)?;
        self.epsilon.check("epsilon", 0.0, 0.5)?;
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> StateParams {
        let r = db_to_r(self.r_db.sample(rng));
        let n = self.n.sample(rng);
        let phi = self.phi.sample(rng).clamp(0.0, PI);
        let epsilon = self.epsilon.sample(rng).clamp(0.0, 0.5);
        StateParams { r, n, phi, epsilon }
    }
}

/// Training example: parameters, analytic diagonal label and its record.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledState {
    pub params: StateParams,
    pub target: DiagonalCovariance,
    pub sequence: QuadratureSequence,
}

impl LabeledState {
    pub fn from_params(
        params: StateParams,
        n_points: usize,
        scheme: PhaseScheme,
        seed: u64,
    ) -> Result<Self> {
        let sequence = generate_sequence(&params, n_points, scheme, seed)?;
        Ok(Self {
            params,
            target: diagonalize(&mixture_covariance(&params)),
            sequence,
        })
    }
}

/// Random-access synthetic dataset: state `i` is a pure function of
/// `(ranges, points_per_state, seed, i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetGenerator {
    pub ranges: DatasetRanges,
    pub count: u64,
    pub points_per_state: usize,
    pub seed: u64,
    pub scheme: PhaseScheme,
}

impl DatasetGenerator {
    pub fn new(
        ranges: DatasetRanges,
        count: u64,
        points_per_state: usize,
        seed: u64,
    ) -> Result<Self> {
        ranges.validate()?;
        if count == 0 {
            return Err(Error::invalid("dataset count must be >= 1"));
        }
        if points_per_state < 2 {
            return Err(Error::invalid("points_per_state must be >= 2"));
        }
        Ok(Self {
            ranges,
            count,
            points_per_state,
            seed,
            scheme: PhaseScheme::UniformRandom,
        })
    }

    pub fn params(&self, index: u64) -> StateParams {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, index));
        self.ranges.sample(&mut rng)
    }

    pub fn state(&self, index: u64) -> LabeledState {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, index));
        let params = self.ranges.sample(&mut rng);
        let seq_seed = rng.random::<u64>();
        LabeledState::from_params(params, self.points_per_state, self.scheme, seq_seed)
            .expect("validated ranges produce valid parameters")
    }

    pub fn iter(&self) -> impl Iterator<Item = LabeledState> + '_ {
        (0..self.count).map(move |i| self.state(i))
    }

    /// Generates every state using the rayon pool; output order is by index.
    pub fn generate_parallel(&self) -> Vec<LabeledState> {
        (0..self.count)
            .into_par_iter()
            .map(|i| self.state(i))
            .collect()
    }
}

/// Streams `count` labeled states.
pub fn generate_dataset(
    ranges: DatasetRanges,
    count: u64,
    points_per_state: usize,
    seed: u64,
) -> Result<impl Iterator<Item = LabeledState>> {
    let gen = DatasetGenerator::new(ranges, count, points_per_state, seed)?;
    Ok((0..count).map(move |i| gen.state(i)))
}

/// Writes `x,theta` rows.
pub fn write_sequence_csv<W: std::io::Write>(seq: &QuadratureSequence, mut out: W) -> Result<()> {
    writeln!(out, "x,theta")?;
    for p in seq.points() {
        writeln!(out, "{:e},{:e}", p.x, p.theta)?;
    }
    Ok(())
}

/// Parses the `x,theta` CSV written by [`write_sequence_csv`].
pub fn read_sequence_csv<R: std::io::BufRead>(input: R) -> Result<QuadratureSequence> {
    let mut points = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with('x')) {
            continue;
        }
        let mut it = line.split(',');
        let parse = |s: Option<&str>| -> Result<f64> {
            s.ok_or_else(|| Error::Format(format!("line {}: expected two columns", lineno + 1)))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))
        };
        let x = parse(it.next())?;
        let theta = parse(it.next())?;
        points.push(QuadraturePoint { x, theta });
    }
    QuadratureSequence::new(points)
}
