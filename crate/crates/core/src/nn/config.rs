use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the residual convolutional estimator.
///
/// A stem convolution is followed by residual blocks. Each block runs two
/// stride-2 convolutions (each followed by batch normalization, ReLU after
/// the first) in parallel with a 1-wide stride-4 projection plus batch
/// normalization; the sum goes through a ReLU. A global average pool feeds a
/// dense layer with three raw outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_length: usize,
    pub input_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub stem_filters: usize,
    /// Output filters of each residual block.
    pub blocks: Vec<usize>,
    pub outputs: usize,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_length: 2048,
            input_channels: 2,
            kernel_size: 7,
            stride: 2,
            stem_filters: 16,
            blocks: vec![16, 32, 64, 128],
            outputs: 3,
            bn_momentum: 0.9,
            bn_epsilon: 1e-5,
        }
    }
}

pub(crate) fn conv_out_len(len: usize, stride: usize) -> usize {
    len.div_ceil(stride)
}

impl NetworkConfig {
    /// Small network used by gradient checks and fast tests.
    pub fn tiny(input_length: usize) -> Self {
        Self {
            input_length,
            stem_filters: 4,
            blocks: vec![4, 4],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("network config: {m}")));
        if self.input_channels != 2 {
            return bad("input_channels must be 2 (x, theta)");
        }
        if self.kernel_size != 7 || self.stride != 2 {
            return bad("kernel_size must be 7 and stride 2");
        }
        if self.outputs != 3 {
            return bad("outputs must be 3");
        }
        if self.stem_filters == 0 || self.blocks.is_empty() || self.blocks.contains(&0) {
            return bad("filter counts must be positive and at least one block is required");
        }
        if self.input_length < 2 {
            return bad("input_length must be >= 2");
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || !(self.bn_epsilon > 0.0) {
            return bad("bn_momentum must be in [0, 1) and bn_epsilon > 0");
        }
        Ok(())
    }

    /// Length of the feature map entering the global pool.
    pub fn final_length(&self) -> usize {
        let mut len = conv_out_len(self.input_length, self.stride);
        for _ in &self.blocks {
            len = conv_out_len(conv_out_len(len, self.stride), self.stride);
        }
        len
    }

    /// Number of trainable parameters.
    pub fn parameter_count(&self) -> usize {
        let k = self.kernel_size;
        let mut count = self.input_channels * self.stem_filters * k + 2 * self.stem_filters;
        let mut cin = self.stem_filters;
        for &cout in &self.blocks {
            count += cin * cout * k + 2 * cout;
            count += cout * cout * k + 2 * cout;
            count += cin * cout + 2 * cout;
            cin = cout;
        }
        count + cin * self.outputs + self.outputs
    }

    /// Number of batch-norm running statistics (mean and variance per channel).
    pub fn running_stat_count(&self) -> usize {
        2 * (self.stem_filters + 3 * self.blocks.iter().sum::<usize>())
    }

    /// Canonical `key=value` text form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let blocks: Vec<String> = self.blocks.iter().map(|b| b.to_string()).collect();
        let _ = writeln!(s, "input_length={}", self.input_length);
        let _ = writeln!(s, "input_channels={}", self.input_channels);
        let _ = writeln!(s, "kernel_size={}", self.kernel_size);
        let _ = writeln!(s, "stride={}", self.stride);
        let _ = writeln!(s, "stem_filters={}", self.stem_filters);
        let _ = writeln!(s, "blocks={}", blocks.join(","));
        let _ = writeln!(s, "outputs={}", self.outputs);
        let _ = writeln!(s, "bn_momentum={:?}", self.bn_momentum);
        let _ = writeln!(s, "bn_epsilon={:?}", self.bn_epsilon);
        s
    }

    /// Parses the text form; keys not belonging to the config are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let fmt = |k: &str, v: &str| Error::Format(format!("config key {k}: bad value {v:?}"));
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Format(format!("config line without '=': {line:?}")));
            };
            let (k, v) = (k.trim(), v.trim());
            let uint = || v.parse::<usize>().map_err(|_| fmt(k, v));
            let float = || v.parse::<f64>().map_err(|_| fmt(k, v));
            match k {
                "input_length" => cfg.input_length = uint()?,
                "input_channels" => cfg.input_channels = uint()?,
                "kernel_size" => cfg.kernel_size = uint()?,
                "stride" => cfg.stride = uint()?,
                "stem_filters" => cfg.stem_filters = uint()?,
                "blocks" => {
                    cfg.blocks = v
                        .split(',')
                        .map(|b| b.trim().parse::<usize>().map_err(|_| fmt(k, v)))
                        .collect::<Result<_>>()?
                }
                "outputs" => cfg.outputs = uint()?,
                "bn_momentum" => cfg.bn_momentum = float()?,
                "bn_epsilon" => cfg.bn_epsilon = float()?,
                _ => {}
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_under_budget() {
        let cfg = NetworkConfig::default();
        cfg.validate().unwrap();
        assert!(cfg.parameter_count() < 500_000, "{}", cfg.parameter_count());
        assert_eq!(cfg.final_length(), 4);
    }

    #[test]
    fn parameter_count_by_hand() {
        // stem 2*4*7 + 8; two blocks of (4*4*7 + 8) * 2 + (16 + 8); head 4*3 + 3
        let cfg = NetworkConfig::tiny(64);
        let block = 2 * (4 * 4 * 7 + 8) + 16 + 8;
        assert_eq!(cfg.parameter_count(), 56 + 8 + 2 * block + 15);
        assert_eq!(cfg.running_stat_count(), 2 * (4 + 3 * 8));
        assert_eq!(cfg.final_length(), 2);
    }

    #[test]
    fn text_round_trip() {
        let cfg = NetworkConfig {
            blocks: vec![8, 12, 5],
            bn_epsilon: 1e-3,
            ..NetworkConfig::default()
        };
        assert_eq!(NetworkConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        assert!(NetworkConfig::from_text("kernel_size=5\n").is_err());
        assert!(NetworkConfig::from_text("blocks=a,b\n").is_err());
    }
}
