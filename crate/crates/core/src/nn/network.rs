use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::NetworkConfig;
use super::layers::{relu_inplace, relu_mask, BatchNorm, BnCache, Conv1d};
use super::output::{loss, loss_grad, HeadState, RawOutput};
use crate::error::{Error, Result};
use crate::estimator::CovarianceEstimator;
use crate::gaussian::{rotate_covariance, CovarianceMatrix};
use crate::homodyne::QuadratureSequence;

#[derive(Debug, Clone, Copy)]
struct Block {
    conv1: Conv1d,
    bn1: BatchNorm,
    conv2: Conv1d,
    bn2: BatchNorm,
    skip: Conv1d,
    bn_skip: BatchNorm,
}

/// Offsets of every layer inside the flat parameter and statistics arrays.
/// Layer order: stem conv, stem norm, then per block conv1, norm1, conv2,
/// norm2, projection, projection norm, and finally the dense head weights
/// followed by its bias.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    stem: Conv1d,
    stem_bn: BatchNorm,
    blocks: Vec<Block>,
    head_in: usize,
    head_w: usize,
    head_b: usize,
    n_params: usize,
    n_stats: usize,
}

struct Cursor {
    params: usize,
    stats: usize,
}

impl Cursor {
    fn conv(&mut self, cin: usize, cout: usize, kernel: usize, stride: usize) -> Conv1d {
        let c = Conv1d {
            cin,
            cout,
            kernel,
            stride,
            pad: kernel / 2,
            w_off: self.params,
        };
        self.params += c.weight_len();
        c
    }

    fn bn(&mut self, channels: usize) -> BatchNorm {
        let b = BatchNorm {
            channels,
            gamma_off: self.params,
            beta_off: self.params + channels,
            stat_off: self.stats,
        };
        self.params += 2 * channels;
        self.stats += 2 * channels;
        b
    }
}

impl Layout {
    fn new(cfg: &NetworkConfig) -> Self {
        let mut cur = Cursor {
            params: 0,
            stats: 0,
        };
        let k = cfg.kernel_size;
        let stem = cur.conv(cfg.input_channels, cfg.stem_filters, k, cfg.stride);
        let stem_bn = cur.bn(cfg.stem_filters);
        let mut blocks = Vec::new();
        let mut cin = cfg.stem_filters;
        for &cout in &cfg.blocks {
            let conv1 = cur.conv(cin, cout, k, cfg.stride);
            let bn1 = cur.bn(cout);
            let conv2 = cur.conv(cout, cout, k, cfg.stride);
            let bn2 = cur.bn(cout);
            let skip = cur.conv(cin, cout, 1, cfg.stride * cfg.stride);
            let bn_skip = cur.bn(cout);
            blocks.push(Block {
                conv1,
                bn1,
                conv2,
                bn2,
                skip,
                bn_skip,
            });
            cin = cout;
        }
        let head_w = cur.params;
        let head_b = head_w + cin * cfg.outputs;
        Self {
            stem,
            stem_bn,
            blocks,
            head_in: cin,
            head_w,
            head_b,
            n_params: head_b + cfg.outputs,
            n_stats: cur.stats,
        }
    }
}

/// Initial head bias: the first diagonal slot starts well below the second
/// (about 0.5 against 3) so the network learns the ordered representation,
/// with the angle slot at the middle of its range.
const HEAD_BIAS_INIT: [f64; 3] = [-2.0, 15.0, 0.0];

/// Metadata recorded with trained weights.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: f64,
    pub optimizer: String,
}

/// Residual convolutional estimator: configuration, flat parameters and
/// batch-norm running statistics.
#[derive(Debug, Clone)]
pub struct ModelWeights {
    config: NetworkConfig,
    layout: Layout,
    pub(crate) params: Vec<f64>,
    pub(crate) running: Vec<f64>,
    pub meta: TrainingMeta,
}

impl PartialEq for ModelWeights {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.params == other.params
            && self.running == other.running
            && self.meta == other.meta
    }
}

/// Per-block activations kept for the backward pass.
struct BlockCache {
    col1: Array2<f64>,
    bn1: BnCache,
    relu1: Array2<f64>,
    col2: Array2<f64>,
    bn2: BnCache,
    col_skip: Array2<f64>,
    bn_skip: BnCache,
    out: Array2<f64>,
    len_in: usize,
    len_mid: usize,
}

pub(crate) struct ForwardCache {
    batch: usize,
    stem_col: Array2<f64>,
    stem_bn: BnCache,
    stem_out: Array2<f64>,
    blocks: Vec<BlockCache>,
    pooled: Array2<f64>,
    final_len: usize,
    pub raw: Vec<RawOutput>,
}

impl ModelWeights {
    /// He-normal convolution weights, unit/zero batch-norm affine terms and a
    /// small dense head; running statistics start at mean 0, variance 1.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        debug_assert_eq!(layout.n_params, config.parameter_count());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.n_params];
        let mut he = |conv: &Conv1d, params: &mut [f64]| {
            let std = (2.0 / (conv.cin * conv.kernel) as f64).sqrt();
            for w in &mut params[conv.w_off..conv.w_off + conv.weight_len()] {
                *w = std * rng.sample::<f64, _>(StandardNormal);
            }
        };
        he(&layout.stem, &mut params);
        for b in &layout.blocks {
            he(&b.conv1, &mut params);
            he(&b.conv2, &mut params);
            he(&b.skip, &mut params);
        }
        let bns = std::iter::once(layout.stem_bn)
            .chain(layout.blocks.iter().flat_map(|b| [b.bn1, b.bn2, b.bn_skip]));
        let mut running = vec![0.0; layout.n_stats];
        for bn in bns {
            params[bn.gamma_off..bn.gamma_off + bn.channels].fill(1.0);
            running[bn.stat_off + bn.channels..bn.stat_off + 2 * bn.channels].fill(1.0);
        }
        let head_std = 0.1 * (1.0 / layout.head_in as f64).sqrt();
        for w in &mut params[layout.head_w..layout.head_b] {
            *w = head_std * rng.sample::<f64, _>(StandardNormal);
        }
        params[layout.head_b..layout.head_b + 3].copy_from_slice(&HEAD_BIAS_INIT);
        Ok(Self {
            config,
            layout,
            params,
            running,
            meta: TrainingMeta::default(),
        })
    }

    pub fn from_parts(
        config: NetworkConfig,
        params: Vec<f64>,
        running: Vec<f64>,
        meta: TrainingMeta,
    ) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.n_params {
            return Err(Error::Shape(format!(
                "config needs {} parameters, got {}",
                layout.n_params,
                params.len()
            )));
        }
        if running.len() != layout.n_stats {
            return Err(Error::Shape(format!(
                "config needs {} running statistics, got {}",
                layout.n_stats,
                running.len()
            )));
        }
        Ok(Self {
            config,
            layout,
            params,
            running,
            meta,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[f64] {
        &self.running
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// Packs sequences as a `[2, batch * length]` input (x row, theta row).
    pub(crate) fn pack_inputs(&self, seqs: &[&QuadratureSequence]) -> Result<Array2<f64>> {
        let len = self.config.input_length;
        let mut input = Array2::<f64>::zeros((2, seqs.len() * len));
        for (b, seq) in seqs.iter().enumerate() {
            if seq.len() != len {
                return Err(Error::Shape(format!(
                    "sequence has {} points, network expects {len}",
                    seq.len()
                )));
            }
            for (t, p) in seq.points().iter().enumerate() {
                input[[0, b * len + t]] = p.x;
                input[[1, b * len + t]] = p.theta;
            }
        }
        Ok(input)
    }

    fn head(&self, pooled: &Array2<f64>) -> Vec<RawOutput> {
        let c = self.layout.head_in;
        let w = &self.params[self.layout.head_w..self.layout.head_b];
        let bias = &self.params[self.layout.head_b..self.layout.head_b + 3];
        (0..pooled.ncols())
            .map(|b| {
                let mut o = [0.0; 3];
                for (j, oj) in o.iter_mut().enumerate() {
                    *oj = bias[j] + (0..c).map(|i| w[j * c + i] * pooled[[i, b]]).sum::<f64>();
                }
                RawOutput {
                    a: o[0],
                    b: o[1],
                    c: o[2],
                }
            })
            .collect()
    }

    fn pool(x: &Array2<f64>, batch: usize, len: usize) -> Array2<f64> {
        let mut pooled = Array2::<f64>::zeros((x.nrows(), batch));
        for (c, row) in x.axis_iter(Axis(0)).enumerate() {
            let row = row.as_slice().expect("contiguous");
            for b in 0..batch {
                pooled[[c, b]] = row[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64;
            }
        }
        pooled
    }

    /// Inference-mode forward pass (running statistics) over a batch.
    pub fn forward_batch(&self, seqs: &[&QuadratureSequence]) -> Result<Vec<RawOutput>> {
        let input = self.pack_inputs(seqs)?;
        Ok(self.forward_infer(&input, seqs.len()))
    }

    pub fn forward(&self, seq: &QuadratureSequence) -> Result<RawOutput> {
        Ok(self.forward_batch(&[seq])?[0])
    }

    fn forward_infer(&self, input: &Array2<f64>, batch: usize) -> Vec<RawOutput> {
        let eps = self.config.bn_epsilon;
        let p = &self.params;
        let st = &self.running;
        let l = &self.layout;
        let mut len = self.config.input_length;
        let mut x = l
            .stem
            .forward_col(p, &l.stem.im2col(input.view(), batch, len));
        len = l.stem.out_len(len);
        l.stem_bn.forward_infer(p, st, &mut x, eps);
        relu_inplace(&mut x);
        for blk in &l.blocks {
            let mut h = blk
                .conv1
                .forward_col(p, &blk.conv1.im2col(x.view(), batch, len));
            let mid = blk.conv1.out_len(len);
            blk.bn1.forward_infer(p, st, &mut h, eps);
            relu_inplace(&mut h);
            let mut h2 = blk
                .conv2
                .forward_col(p, &blk.conv2.im2col(h.view(), batch, mid));
            blk.bn2.forward_infer(p, st, &mut h2, eps);
            let mut s = blk
                .skip
                .forward_col(p, &blk.skip.im2col(x.view(), batch, len));
            blk.bn_skip.forward_infer(p, st, &mut s, eps);
            h2 += &s;
            relu_inplace(&mut h2);
            x = h2;
            len = blk.conv2.out_len(mid);
        }
        self.head(&Self::pool(&x, batch, len))
    }

    /// Training-mode forward pass using batch moments. Running statistics are
    /// updated only when `update_running` is set.
    pub(crate) fn forward_train(
        &mut self,
        input: &Array2<f64>,
        batch: usize,
        update_running: bool,
    ) -> ForwardCache {
        let eps = self.config.bn_epsilon;
        let momentum = self.config.bn_momentum;
        let l = &self.layout;
        let p = &self.params;
        let mut stats = update_running.then_some(&mut self.running);

        let mut len = self.config.input_length;
        let stem_col = l.stem.im2col(input.view(), batch, len);
        let (mut x, stem_bn) = l.stem_bn.forward_train(
            p,
            l.stem.forward_col(p, &stem_col),
            eps,
            running_slot(&mut stats, momentum),
        );
        relu_inplace(&mut x);
        let stem_out = x.clone();
        len = l.stem.out_len(len);

        let mut blocks = Vec::with_capacity(l.blocks.len());
        for blk in &l.blocks {
            let col1 = blk.conv1.im2col(x.view(), batch, len);
            let (mut h, bn1) = blk.bn1.forward_train(
                p,
                blk.conv1.forward_col(p, &col1),
                eps,
                running_slot(&mut stats, momentum),
            );
            relu_inplace(&mut h);
            let mid = blk.conv1.out_len(len);
            let col2 = blk.conv2.im2col(h.view(), batch, mid);
            let (mut h2, bn2) = blk.bn2.forward_train(
                p,
                blk.conv2.forward_col(p, &col2),
                eps,
                running_slot(&mut stats, momentum),
            );
            let col_skip = blk.skip.im2col(x.view(), batch, len);
            let (s, bn_skip) = blk.bn_skip.forward_train(
                p,
                blk.skip.forward_col(p, &col_skip),
                eps,
                running_slot(&mut stats, momentum),
            );
            h2 += &s;
            relu_inplace(&mut h2);
            blocks.push(BlockCache {
                col1,
                bn1,
                relu1: h,
                col2,
                bn2,
                col_skip,
                bn_skip,
                out: h2.clone(),
                len_in: len,
                len_mid: mid,
            });
            x = h2;
            len = blk.conv2.out_len(mid);
        }
        let pooled = Self::pool(&x, batch, len);
        let raw = self.head(&pooled);
        ForwardCache {
            batch,
            stem_col,
            stem_bn,
            stem_out,
            blocks,
            pooled,
            final_len: len,
            raw,
        }
    }

    /// Backpropagates per-sample raw-output gradients into `grads`.
    pub(crate) fn backward(&self, cache: &ForwardCache, d_raw: &[RawOutput], grads: &mut [f64]) {
        let l = &self.layout;
        let p = &self.params;
        let batch = cache.batch;
        let c = l.head_in;

        // dense head
        let mut d_pooled = Array2::<f64>::zeros((c, batch));
        {
            let w = &p[l.head_w..l.head_b];
            for (b, d) in d_raw.iter().enumerate() {
                let dj = [d.a, d.b, d.c];
                for j in 0..3 {
                    grads[l.head_b + j] += dj[j];
                    for i in 0..c {
                        grads[l.head_w + j * c + i] += dj[j] * cache.pooled[[i, b]];
                        d_pooled[[i, b]] += dj[j] * w[j * c + i];
                    }
                }
            }
        }
        let len = cache.final_len;
        let mut dx = Array2::<f64>::zeros((c, batch * len));
        for (i, mut row) in dx.axis_iter_mut(Axis(0)).enumerate() {
            for b in 0..batch {
                let g = d_pooled[[i, b]] / len as f64;
                row.slice_mut(ndarray::s![b * len..(b + 1) * len]).fill(g);
            }
        }

        for (blk, bc) in l.blocks.iter().zip(&cache.blocks).rev() {
            relu_mask(&mut dx, &bc.out);
            let d_skip = blk.bn_skip.backward(p, grads, &bc.bn_skip, dx.clone());
            let d_h2 = blk.bn2.backward(p, grads, &bc.bn2, dx);
            let mut d_h = blk
                .conv2
                .backward(p, grads, &bc.col2, &d_h2, batch, bc.len_mid, true)
                .expect("input gradient requested");
            relu_mask(&mut d_h, &bc.relu1);
            let d_h1 = blk.bn1.backward(p, grads, &bc.bn1, d_h);
            let mut d_in = blk
                .conv1
                .backward(p, grads, &bc.col1, &d_h1, batch, bc.len_in, true)
                .expect("input gradient requested");
            let d_in_skip = blk
                .skip
                .backward(p, grads, &bc.col_skip, &d_skip, batch, bc.len_in, true)
                .expect("input gradient requested");
            d_in += &d_in_skip;
            dx = d_in;
        }

        relu_mask(&mut dx, &cache.stem_out);
        let d_stem = l.stem_bn.backward(p, grads, &cache.stem_bn, dx);
        l.stem.backward(
            p,
            grads,
            &cache.stem_col,
            &d_stem,
            batch,
            self.config.input_length,
            false,
        );
    }

    /// Mean batch loss and its exact gradient with respect to every
    /// parameter, with batch normalization in training mode.
    pub fn loss_and_gradient(
        &mut self,
        seqs: &[&QuadratureSequence],
        targets: &[CovarianceMatrix],
    ) -> Result<(f64, Vec<f64>)> {
        let input = self.pack_inputs(seqs)?;
        let mut grads = vec![0.0; self.params.len()];
        let loss = self.accumulate_gradient(&input, targets, &mut grads, false)?;
        Ok((loss, grads))
    }

    /// Mean batch loss in training mode without touching running statistics.
    pub fn batch_loss(
        &mut self,
        seqs: &[&QuadratureSequence],
        targets: &[CovarianceMatrix],
    ) -> Result<f64> {
        let input = self.pack_inputs(seqs)?;
        let cache = self.forward_train(&input, seqs.len(), false);
        Ok(batch_mean_loss(&cache.raw, targets))
    }

    /// Predictions with batch normalization in training mode (batch moments),
    /// the quantity the training loss is computed on.
    pub fn predict_batch_training(
        &mut self,
        seqs: &[&QuadratureSequence],
    ) -> Result<Vec<CovarianceMatrix>> {
        let input = self.pack_inputs(seqs)?;
        let cache = self.forward_train(&input, seqs.len(), false);
        Ok(cache.raw.iter().map(|r| HeadState::new(r).sigma).collect())
    }

    pub(crate) fn accumulate_gradient(
        &mut self,
        input: &Array2<f64>,
        targets: &[CovarianceMatrix],
        grads: &mut [f64],
        update_running: bool,
    ) -> Result<f64> {
        let batch = targets.len();
        if input.ncols() != batch * self.config.input_length {
            return Err(Error::Shape("input and target batch sizes differ".into()));
        }
        let cache = self.forward_train(input, batch, update_running);
        let mut total = 0.0;
        let d_raw: Vec<RawOutput> = cache
            .raw
            .iter()
            .zip(targets)
            .map(|(raw, t)| {
                let head = HeadState::new(raw);
                total += loss(&head.sigma, t);
                let g = loss_grad(&head.sigma, t);
                let scaled = CovarianceMatrix {
                    xx: g.xx / batch as f64,
                    pp: g.pp / batch as f64,
                    xp: g.xp / batch as f64,
                };
                head.backward(raw, &scaled)
            })
            .collect();
        self.backward(&cache, &d_raw, grads);
        Ok(total / batch as f64)
    }

    /// Predicted covariance; physical for every input by construction.
    pub fn predict_sigma(&self, seq: &QuadratureSequence) -> Result<CovarianceMatrix> {
        Ok(HeadState::new(&self.forward(seq)?).sigma)
    }

    pub fn predict_batch(&self, seqs: &[&QuadratureSequence]) -> Result<Vec<CovarianceMatrix>> {
        Ok(self
            .forward_batch(seqs)?
            .iter()
            .map(|r| HeadState::new(r).sigma)
            .collect())
    }
}

fn running_slot<'a>(
    s: &'a mut Option<&mut Vec<f64>>,
    momentum: f64,
) -> Option<(&'a mut [f64], f64)> {
    s.as_deref_mut().map(|v| (v.as_mut_slice(), momentum))
}

fn batch_mean_loss(raw: &[RawOutput], targets: &[CovarianceMatrix]) -> f64 {
    raw.iter()
        .zip(targets)
        .map(|(r, t)| loss(&HeadState::new(r).sigma, t))
        .sum::<f64>()
        / targets.len() as f64
}

impl CovarianceEstimator for ModelWeights {
    fn estimate_covariance(&self, seq: &QuadratureSequence) -> Result<CovarianceMatrix> {
        self.predict_sigma(seq)
    }

    fn name(&self) -> &str {
        "nn"
    }
}

/// `rotate_covariance(diag, -theta0)`, the covariance whose minimum-variance
/// phase is `theta0`.
pub fn covariance_from_state(sxx: f64, spp: f64, theta0: f64) -> CovarianceMatrix {
    rotate_covariance(&CovarianceMatrix::diagonal(sxx, spp), -theta0)
}
