//! `GQNN0001` model files.
//!
//! Layout (little-endian): magic, `u32` version, `u32` length plus UTF-8
//! config text, `u32` length plus UTF-8 metadata text, `u64` parameter count
//! and the parameters as `f64`, `u64` running-statistic count and the
//! statistics as `f64`.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::config::NetworkConfig;
use super::network::{ModelWeights, TrainingMeta};
use crate::dataset::tmp_sibling;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"GQNN0001";
pub const MODEL_VERSION: u32 = 1;

fn meta_to_text(meta: &TrainingMeta) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "seed={}", meta.seed);
    let _ = writeln!(s, "epochs={}", meta.epochs);
    let _ = writeln!(s, "final_loss={:?}", meta.final_loss);
    let _ = writeln!(s, "optimizer={}", meta.optimizer);
    s
}

fn meta_from_text(text: &str) -> Result<TrainingMeta> {
    let mut meta = TrainingMeta::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("metadata line without '=': {line:?}")))?;
        let bad = || Error::Format(format!("metadata key {k}: bad value {v:?}"));
        match k {
            "seed" => meta.seed = v.parse().map_err(|_| bad())?,
            "epochs" => meta.epochs = v.parse().map_err(|_| bad())?,
            "final_loss" => meta.final_loss = v.parse().map_err(|_| bad())?,
            "optimizer" => meta.optimizer = v.to_string(),
            _ => {}
        }
    }
    Ok(meta)
}

pub fn encode_model(model: &ModelWeights) -> Vec<u8> {
    let config = model.config().to_text();
    let meta = meta_to_text(&model.meta);
    let mut out = Vec::with_capacity(
        64 + config.len() + meta.len() + 8 * (model.params.len() + model.running.len()),
    );
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for text in [&config, &meta] {
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
    }
    for arr in [&model.params, &model.running] {
        out.extend_from_slice(&(arr.len() as u64).to_le_bytes());
        for v in arr.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Shape(format!(
                    "model file ends inside {what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.buf.len()
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn text(&mut self, what: &str) -> Result<&'a str> {
        let n = self.u32(what)? as usize;
        std::str::from_utf8(self.take(n, what)?)
            .map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }

    fn floats(&mut self, expected: usize, what: &str) -> Result<Vec<f64>> {
        let n = self.u64(what)?;
        if n != expected as u64 {
            return Err(Error::Shape(format!(
                "{what}: file declares {n}, config requires {expected}"
            )));
        }
        let bytes = self.take(8 * expected, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode_model(buf: &[u8]) -> Result<ModelWeights> {
    if buf.len() < MODEL_MAGIC.len() || &buf[..8] != MODEL_MAGIC {
        return Err(Error::Format(
            "not a GQNN0001 model file (bad magic)".into(),
        ));
    }
    let mut r = Reader { buf, pos: 8 };
    let version = r.u32("version")?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!(
            "unsupported model version {version}"
        )));
    }
    let config = NetworkConfig::from_text(r.text("config block")?)?;
    let meta = meta_from_text(r.text("metadata block")?)?;
    let params = r.floats(config.parameter_count(), "parameter array")?;
    let running = r.floats(config.running_stat_count(), "running statistics")?;
    if r.pos != buf.len() {
        return Err(Error::Shape(format!(
            "{} trailing bytes after model data",
            buf.len() - r.pos
        )));
    }
    ModelWeights::from_parts(config, params, running, meta)
}

/// Writes atomically through a temporary sibling file.
pub fn save_model(path: impl AsRef<Path>, model: &ModelWeights) -> Result<()> {
    let path = path.as_ref();
    let tmp = tmp_sibling(path);
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(&encode_model(model))?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelWeights> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    decode_model(&buf)
}
