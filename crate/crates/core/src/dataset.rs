//! `GQST0001` binary dataset files.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field                                   |
//! |-------:|-----:|-----------------------------------------|
//! | 0      | 8    | magic `GQST0001`                        |
//! | 8      | 4    | version (u32, currently 1)              |
//! | 12     | 8    | record count (u64)                      |
//! | 20     | 4    | points per state (u32)                  |
//! | 24     | 8    | base seed (u64)                         |
//! | 32     | 64   | ranges: r_db, n, phi, epsilon (min, max as f64) |
//!
//! Each record is 7 label doubles `(r, n, phi, epsilon, sxx, spp, theta0)`
//! followed by `points_per_state` pairs `(x, theta)`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gaussian::{DiagonalCovariance, StateParams};
use crate::homodyne::{
    DatasetGenerator, DatasetRanges, LabeledState, QuadraturePoint, QuadratureSequence, Range,
};

pub const DATASET_MAGIC: &[u8; 8] = b"GQST0001";
pub const DATASET_VERSION: u32 = 1;
pub const HEADER_SIZE: u64 = 96;
const LABEL_DOUBLES: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetHeader {
    pub version: u32,
    pub count: u64,
    pub points_per_state: u32,
    pub base_seed: u64,
    pub ranges: DatasetRanges,
}

impl DatasetHeader {
    pub fn new(count: u64, points_per_state: u32, base_seed: u64, ranges: DatasetRanges) -> Self {
        Self {
            version: DATASET_VERSION,
            count,
            points_per_state,
            base_seed,
            ranges,
        }
    }

    pub fn for_generator(gen: &DatasetGenerator) -> Result<Self> {
        let pps = u32::try_from(gen.points_per_state)
            .map_err(|_| Error::invalid("points_per_state does not fit in u32"))?;
        Ok(Self::new(gen.count, pps, gen.seed, gen.ranges))
    }

    pub fn record_size(&self) -> u64 {
        (LABEL_DOUBLES + 2 * self.points_per_state as u64) * 8
    }

    /// Expected file size in bytes.
    pub fn file_size(&self) -> u64 {
        HEADER_SIZE + self.count * self.record_size()
    }

    fn encode(&self) -> [u8; HEADER_SIZE as usize] {
        let mut buf = [0u8; HEADER_SIZE as usize];
        buf[0..8].copy_from_slice(DATASET_MAGIC);
        buf[8..12].copy_from_slice(&self.version.to_le_bytes());
        buf[12..20].copy_from_slice(&self.count.to_le_bytes());
        buf[20..24].copy_from_slice(&self.points_per_state.to_le_bytes());
        buf[24..32].copy_from_slice(&self.base_seed.to_le_bytes());
        let r = &self.ranges;
        let vals = [
            r.r_db.min,
            r.r_db.max,
            r.n.min,
            r.n.max,
            r.phi.min,
            r.phi.max,
            r.epsilon.min,
            r.epsilon.max,
        ];
        for (i, v) in vals.iter().enumerate() {
            buf[32 + 8 * i..40 + 8 * i].copy_from_slice(&v.to_le_bytes());
        }
        buf
    }

    fn decode(buf: &[u8; HEADER_SIZE as usize]) -> Result<Self> {
        if &buf[0..8] != DATASET_MAGIC {
            return Err(Error::Format(format!(
                "bad dataset magic {:?}",
                String::from_utf8_lossy(&buf[0..8])
            )));
        }
        let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
        if version != DATASET_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset version {version}"
            )));
        }
        let count = u64::from_le_bytes(buf[12..20].try_into().unwrap());
        if count == 0 {
            return Err(Error::Format("dataset declares zero records".into()));
        }
        let points_per_state = u32::from_le_bytes(buf[20..24].try_into().unwrap());
        let base_seed = u64::from_le_bytes(buf[24..32].try_into().unwrap());
        let f = |i: usize| f64::from_le_bytes(buf[32 + 8 * i..40 + 8 * i].try_into().unwrap());
        let ranges = DatasetRanges {
            r_db: Range::new(f(0), f(1)),
            n: Range::new(f(2), f(3)),
            phi: Range::new(f(4), f(5)),
            epsilon: Range::new(f(6), f(7)),
        };
        Ok(Self {
            version,
            count,
            points_per_state,
            base_seed,
            ranges,
        })
    }
}

fn encode_record(state: &LabeledState, out: &mut Vec<u8>) {
    let p = &state.params;
    let t = &state.target;
    for v in [p.r, p.n, p.phi, p.epsilon, t.sxx, t.spp, t.theta0] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for q in state.sequence.points() {
        out.extend_from_slice(&q.x.to_le_bytes());
        out.extend_from_slice(&q.theta.to_le_bytes());
    }
}

fn decode_record(buf: &[u8], points_per_state: usize) -> Result<LabeledState> {
    let f = |i: usize| f64::from_le_bytes(buf[8 * i..8 * i + 8].try_into().unwrap());
    let params = StateParams {
        r: f(0),
        n: f(1),
        phi: f(2),
        epsilon: f(3),
    };
    params
        .validate()
        .map_err(|e| Error::Format(format!("record parameters: {e}")))?;
    let target = DiagonalCovariance {
        sxx: f(4),
        spp: f(5),
        theta0: f(6),
    };
    let mut points = Vec::with_capacity(points_per_state);
    for k in 0..points_per_state {
        let i = LABEL_DOUBLES as usize + 2 * k;
        points.push(QuadraturePoint {
            x: f(i),
            theta: f(i + 1),
        });
    }
    let sequence = QuadratureSequence::new(points)
        .map_err(|e| Error::Format(format!("record sequence: {e}")))?;
    Ok(LabeledState {
        params,
        target,
        sequence,
    })
}

/// Streaming writer. Records go to a temporary sibling file that is renamed
/// into place by [`DatasetWriter::finish`].
pub struct DatasetWriter {
    header: DatasetHeader,
    out: BufWriter<File>,
    tmp_path: PathBuf,
    final_path: PathBuf,
    written: u64,
    buf: Vec<u8>,
}

impl DatasetWriter {
    pub fn create(path: impl AsRef<Path>, header: DatasetHeader) -> Result<Self> {
        let final_path = path.as_ref().to_path_buf();
        let tmp_path = tmp_sibling(&final_path);
        let mut out = BufWriter::new(File::create(&tmp_path)?);
        out.write_all(&header.encode())?;
        Ok(Self {
            header,
            out,
            tmp_path,
            final_path,
            written: 0,
            buf: Vec::new(),
        })
    }

    pub fn write_state(&mut self, state: &LabeledState) -> Result<()> {
        if state.sequence.len() != self.header.points_per_state as usize {
            return Err(Error::Shape(format!(
                "record has {} points, header declares {}",
                state.sequence.len(),
                self.header.points_per_state
            )));
        }
        if self.written >= self.header.count {
            return Err(Error::Shape(format!(
                "header declares {} records",
                self.header.count
            )));
        }
        self.buf.clear();
        encode_record(state, &mut self.buf);
        self.out.write_all(&self.buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.header.count {
            let _ = fs::remove_file(&self.tmp_path);
            return Err(Error::Shape(format!(
                "wrote {} records, header declares {}",
                self.written, self.header.count
            )));
        }
        self.out.flush()?;
        self.out.get_ref().sync_all()?;
        fs::rename(&self.tmp_path, &self.final_path)?;
        Ok(())
    }
}

pub(crate) fn tmp_sibling(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

pub fn write_dataset<'a>(
    path: impl AsRef<Path>,
    header: &DatasetHeader,
    states: impl IntoIterator<Item = &'a LabeledState>,
) -> Result<()> {
    let mut w = DatasetWriter::create(path, *header)?;
    for s in states {
        w.write_state(s)?;
    }
    w.finish()
}

/// Random-access reader over a dataset file.
pub struct DatasetFile {
    header: DatasetHeader,
    reader: BufReader<File>,
    buf: Vec<u8>,
}

impl DatasetFile {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        let len = file.metadata()?.len();
        let mut reader = BufReader::new(file);
        if len < HEADER_SIZE {
            return Err(Error::Truncated {
                expected: HEADER_SIZE,
                found: len,
            });
        }
        let mut hbuf = [0u8; HEADER_SIZE as usize];
        reader.read_exact(&mut hbuf)?;
        let header = DatasetHeader::decode(&hbuf)?;
        let expected = header.file_size();
        if len < expected {
            return Err(Error::Truncated {
                expected,
                found: len,
            });
        }
        if len > expected {
            return Err(Error::Format(format!(
                "{} trailing bytes after the last record",
                len - expected
            )));
        }
        Ok(Self {
            buf: vec![0u8; header.record_size() as usize],
            header,
            reader,
        })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn len(&self) -> u64 {
        self.header.count
    }

    pub fn is_empty(&self) -> bool {
        self.header.count == 0
    }

    pub fn read_state(&mut self, index: u64) -> Result<LabeledState> {
        if index >= self.header.count {
            return Err(Error::Shape(format!(
                "record {index} out of range (count {})",
                self.header.count
            )));
        }
        let offset = HEADER_SIZE + index * self.header.record_size();
        self.reader.seek(SeekFrom::Start(offset))?;
        self.reader.read_exact(&mut self.buf)?;
        decode_record(&self.buf, self.header.points_per_state as usize)
    }
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<(DatasetHeader, Vec<LabeledState>)> {
    let mut f = DatasetFile::open(path)?;
    let header = *f.header();
    let states = (0..header.count)
        .map(|i| f.read_state(i))
        .collect::<Result<Vec<_>>>()?;
    Ok((header, states))
}
