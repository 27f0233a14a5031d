use std::borrow::Cow;
use std::f64::consts::PI;
use std::io::Write;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::ModelWeights;
use crate::dataset::DatasetFile;
use crate::error::{Error, Result};
use crate::gaussian::CovarianceMatrix;
use crate::homodyne::{derive_seed, DatasetGenerator, LabeledState};

/// Random-access source of training examples.
pub trait TrainingSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&mut self, index: usize) -> Result<Cow<'_, LabeledState>>;
}

impl TrainingSource for &[LabeledState] {
    fn len(&self) -> usize {
        <[LabeledState]>::len(self)
    }

    fn get(&mut self, index: usize) -> Result<Cow<'_, LabeledState>> {
        Ok(Cow::Borrowed(&self[index]))
    }
}

impl TrainingSource for Vec<LabeledState> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn get(&mut self, index: usize) -> Result<Cow<'_, LabeledState>> {
        Ok(Cow::Borrowed(&self[index]))
    }
}

/// Regenerates each state on demand; nothing is held in memory.
impl TrainingSource for DatasetGenerator {
    fn len(&self) -> usize {
        self.count as usize
    }

    fn get(&mut self, index: usize) -> Result<Cow<'_, LabeledState>> {
        Ok(Cow::Owned(self.state(index as u64)))
    }
}

impl TrainingSource for DatasetFile {
    fn len(&self) -> usize {
        DatasetFile::len(self) as usize
    }

    fn get(&mut self, index: usize) -> Result<Cow<'_, LabeledState>> {
        Ok(Cow::Owned(self.read_state(index as u64)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Schedule {
    Constant,
    /// Half-cosine decay from the base rate to zero over the run.
    #[default]
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub schedule: Schedule,
    /// Epochs of linear warm-up from `learning_rate / warmup_epochs`.
    pub warmup_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            schedule: Schedule::Cosine,
            warmup_epochs: 0,
            beta1: 0.9,
            beta2: 0.9,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid(
                "batch_size must be >= 2 (batch normalization)",
            ));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.adam_epsilon > 0.0)
        {
            return Err(Error::invalid(
                "Adam moments must lie in [0, 1) and epsilon be positive",
            ));
        }
        Ok(())
    }

    pub fn optimizer_label(&self) -> String {
        format!(
            "adam(lr={:?},beta1={:?},beta2={:?},eps={:?},batch={},schedule={:?},warmup={})",
            self.learning_rate,
            self.beta1,
            self.beta2,
            self.adam_epsilon,
            self.batch_size,
            self.schedule,
            self.warmup_epochs
        )
    }

    fn rate_at(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            return self.learning_rate * (epoch + 1) as f64 / self.warmup_epochs as f64;
        }
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::Cosine => {
                0.5 * self.learning_rate * (1.0 + (PI * epoch as f64 / self.epochs as f64).cos())
            }
        }
    }
}

/// Hyperparameters and epoch-mean loss history of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRun {
    pub config: TrainConfig,
    pub dataset_size: usize,
    pub loss_history: Vec<f64>,
}

impl TrainingRun {
    pub fn final_loss(&self) -> Option<f64> {
        self.loss_history.last().copied()
    }

    pub fn write_loss_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,mean_loss")?;
        for (i, l) in self.loss_history.iter().enumerate() {
            writeln!(out, "{},{:?}", i + 1, l)?;
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, cfg: &TrainConfig, lr: f64, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_epsilon);
        }
    }
}

/// Minibatch Adam over a shuffled source. `on_epoch(epoch, mean_loss)` is
/// called after every epoch (1-based). A trailing batch with a single
/// example is skipped since batch statistics are undefined for it.
pub fn train<S: TrainingSource + ?Sized>(
    model: &mut ModelWeights,
    source: &mut S,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainingRun> {
    config.validate()?;
    let n = source.len();
    if n < 2 {
        return Err(Error::invalid("training needs at least 2 examples"));
    }
    let len = model.config().input_length;
    let mut adam = Adam::new(model.parameter_count());
    let mut grads = vec![0.0; model.parameter_count()];
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let lr = config.rate_at(epoch);
        let (mut sum, mut seen) = (0.0, 0usize);
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let mut input = Array2::<f64>::zeros((2, chunk.len() * len));
            let mut targets = Vec::with_capacity(chunk.len());
            for (b, &i) in chunk.iter().enumerate() {
                let state = source.get(i)?;
                let pts = state.sequence.points();
                if pts.len() != len {
                    return Err(Error::Shape(format!(
                        "example {i} has {} points, network expects {len}",
                        pts.len()
                    )));
                }
                for (t, p) in pts.iter().enumerate() {
                    input[[0, b * len + t]] = p.x;
                    input[[1, b * len + t]] = p.theta;
                }
                targets.push(state.target.to_covariance());
            }
            grads.fill(0.0);
            let loss = model.accumulate_gradient(&input, &targets, &mut grads, true)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    step,
                    loss,
                });
            }
            adam.step(config, lr, &mut model.params, &grads);
            sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let mean = sum / seen as f64;
        history.push(mean);
        on_epoch(epoch + 1, mean);
    }

    model.meta.seed = config.seed;
    model.meta.epochs = config.epochs;
    model.meta.final_loss = *history.last().expect("epochs >= 1");
    model.meta.optimizer = config.optimizer_label();
    Ok(TrainingRun {
        config: config.clone(),
        dataset_size: n,
        loss_history: history,
    })
}

/// Mean loss of the model in inference mode over a set of states.
pub fn evaluate_loss(
    model: &ModelWeights,
    states: &[LabeledState],
    batch_size: usize,
) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::invalid("no states to evaluate"));
    }
    let mut total = 0.0;
    for chunk in states.chunks(batch_size.max(1)) {
        let seqs: Vec<_> = chunk.iter().map(|s| &s.sequence).collect();
        let preds: Vec<CovarianceMatrix> = model.predict_batch(&seqs)?;
        total += preds
            .iter()
            .zip(chunk)
            .map(|(p, s)| super::output::loss(p, &s.target.to_covariance()))
            .sum::<f64>();
    }
    Ok(total / states.len() as f64)
}
