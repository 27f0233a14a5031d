//! Layer primitives over `[channels, batch * length]` activation matrices.
//!
//! Each sample occupies a contiguous run of `length` columns, so every
//! convolution is a single im2col matrix product over the whole batch.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};

#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv1d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub w_off: usize,
}

impl Conv1d {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.kernel
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn weights<'a>(&self, params: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape(
            (self.cout, self.cin * self.kernel),
            &params[self.w_off..self.w_off + self.weight_len()],
        )
        .expect("weight slice matches layer shape")
    }

    /// `[cin * kernel, batch * out_len]`, zero outside each sample.
    pub fn im2col(&self, input: ArrayView2<f64>, batch: usize, len: usize) -> Array2<f64> {
        let lout = self.out_len(len);
        let mut col = Array2::<f64>::zeros((self.cin * self.kernel, batch * lout));
        for ci in 0..self.cin {
            let row_in = input.row(ci);
            let row_in = row_in
                .as_slice()
                .expect("activations are row-major contiguous");
            for kk in 0..self.kernel {
                let mut row_out = col.row_mut(ci * self.kernel + kk);
                let row_out = row_out.as_slice_mut().expect("contiguous");
                for b in 0..batch {
                    let src = &row_in[b * len..(b + 1) * len];
                    let dst = &mut row_out[b * lout..(b + 1) * lout];
                    for (t, d) in dst.iter_mut().enumerate() {
                        let pos = (self.stride * t + kk) as isize - self.pad as isize;
                        if pos >= 0 && (pos as usize) < len {
                            *d = src[pos as usize];
                        }
                    }
                }
            }
        }
        col
    }

    /// Scatter-adds a column-gradient back onto the input layout.
    fn col2im(&self, dcol: &Array2<f64>, batch: usize, len: usize) -> Array2<f64> {
        let lout = self.out_len(len);
        let mut dx = Array2::<f64>::zeros((self.cin, batch * len));
        for ci in 0..self.cin {
            let mut row_dx = dx.row_mut(ci);
            let row_dx = row_dx.as_slice_mut().expect("contiguous");
            for kk in 0..self.kernel {
                let row = dcol.row(ci * self.kernel + kk);
                let row = row.as_slice().expect("contiguous");
                for b in 0..batch {
                    let src = &row[b * lout..(b + 1) * lout];
                    let dst = &mut row_dx[b * len..(b + 1) * len];
                    for (t, &g) in src.iter().enumerate() {
                        let pos = (self.stride * t + kk) as isize - self.pad as isize;
                        if pos >= 0 && (pos as usize) < len {
                            dst[pos as usize] += g;
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward_col(&self, params: &[f64], col: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros((self.cout, col.ncols()));
        general_mat_mul(1.0, &self.weights(params), col, 0.0, &mut out);
        out
    }

    /// Accumulates the weight gradient and, if requested, returns the input
    /// gradient.
    pub fn backward(
        &self,
        params: &[f64],
        grads: &mut [f64],
        col: &Array2<f64>,
        dout: &Array2<f64>,
        batch: usize,
        len: usize,
        input_grad: bool,
    ) -> Option<Array2<f64>> {
        let mut dw = ArrayViewMut2::from_shape(
            (self.cout, self.cin * self.kernel),
            &mut grads[self.w_off..self.w_off + self.weight_len()],
        )
        .expect("gradient slice matches layer shape");
        general_mat_mul(1.0, dout, &col.t(), 1.0, &mut dw);
        if !input_grad {
            return None;
        }
        let mut dcol = Array2::<f64>::zeros(col.raw_dim());
        general_mat_mul(1.0, &self.weights(params).t(), dout, 0.0, &mut dcol);
        Some(self.col2im(&dcol, batch, len))
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BatchNorm {
    pub channels: usize,
    pub gamma_off: usize,
    pub beta_off: usize,
    /// Offset of the running means; running variances follow them.
    pub stat_off: usize,
}

pub(crate) struct BnCache {
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    /// Normalizes with per-batch moments, updating `running` when given.
    pub fn forward_train(
        &self,
        params: &[f64],
        x: Array2<f64>,
        eps: f64,
        running: Option<(&mut [f64], f64)>,
    ) -> (Array2<f64>, BnCache) {
        let mut xhat = x;
        let m = xhat.ncols() as f64;
        let mut inv_std = Vec::with_capacity(self.channels);
        let mut batch_stats = Vec::with_capacity(self.channels);
        for mut row in xhat.axis_iter_mut(Axis(0)) {
            let mean = row.sum() / m;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            let is = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
            batch_stats.push((mean, var));
        }
        if let Some((stats, momentum)) = running {
            let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            for (c, (mean, var)) in batch_stats.iter().enumerate() {
                let rm = &mut stats[self.stat_off + c];
                *rm = momentum * *rm + (1.0 - momentum) * mean;
                let rv = &mut stats[self.stat_off + self.channels + c];
                *rv = momentum * *rv + (1.0 - momentum) * var * unbias;
            }
        }
        let mut y = xhat.clone();
        self.affine(params, &mut y);
        (y, BnCache { xhat, inv_std })
    }

    pub fn forward_infer(&self, params: &[f64], stats: &[f64], x: &mut Array2<f64>, eps: f64) {
        for (c, mut row) in x.axis_iter_mut(Axis(0)).enumerate() {
            let mean = stats[self.stat_off + c];
            let var = stats[self.stat_off + self.channels + c];
            let scale = params[self.gamma_off + c] / (var + eps).sqrt();
            let shift = params[self.beta_off + c] - mean * scale;
            row.mapv_inplace(|v| v * scale + shift);
        }
    }

    fn affine(&self, params: &[f64], y: &mut Array2<f64>) {
        for (c, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
            let g = params[self.gamma_off + c];
            let b = params[self.beta_off + c];
            row.mapv_inplace(|v| g * v + b);
        }
    }

    pub fn backward(
        &self,
        params: &[f64],
        grads: &mut [f64],
        cache: &BnCache,
        dy: Array2<f64>,
    ) -> Array2<f64> {
        let mut dx = dy;
        let m = dx.ncols() as f64;
        for (c, mut row) in dx.axis_iter_mut(Axis(0)).enumerate() {
            let xh = cache.xhat.row(c);
            let sum_dy = row.sum();
            let sum_dy_xh = row.iter().zip(xh.iter()).map(|(d, x)| d * x).sum::<f64>();
            grads[self.gamma_off + c] += sum_dy_xh;
            grads[self.beta_off + c] += sum_dy;
            let k = params[self.gamma_off + c] * cache.inv_std[c];
            let mean_dy = sum_dy / m;
            let mean_dy_xh = sum_dy_xh / m;
            row.zip_mut_with(&xh, |d, &x| *d = k * (*d - mean_dy - x * mean_dy_xh));
        }
        dx
    }
}

pub(crate) fn relu_inplace(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub(crate) fn relu_mask(grad: &mut Array2<f64>, out: &Array2<f64>) {
    grad.zip_mut_with(out, |g, &o| {
        if o <= 0.0 {
            *g = 0.0
        }
    });
}
