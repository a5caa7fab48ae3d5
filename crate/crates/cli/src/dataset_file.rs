//! Binary dataset format: length-prefixed little-endian records behind a
//! checksummed header (see `docs/dataset-format.md`).
//!
//! Layout:
//!
//! ```text
//! magic   "TSAD"                      4 bytes
//! version u16 = 1, reserved u16 = 0   4 bytes
//! count   u64
//! fnv1a64 checksum of the record region, u64
//! records, each:
//!   seed u64, line_index u32, faulted_end u8, label u8, pad u16 = 0,
//!   clear_time f64, tsi f64, n u32, n_edges u32,
//!   edges (u32, u32) * n_edges, features f64 * (n * 2) row-major
//! ```

use std::path::Path;

use anyhow::{Context, Result};
use tsa_core::graph::{GraphSample, SampleMeta};
use tsa_core::linalg::Mat;

const MAGIC: [u8; 4] = *b"TSAD";
const VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("not a dataset file (bad magic)")]
    BadMagic,
    #[error("unsupported dataset version {0} (expected {VERSION})")]
    Version(u16),
    #[error("dataset file is truncated")]
    Truncated,
    #[error("dataset checksum mismatch (stored {stored:#018x}, computed {computed:#018x})")]
    Checksum { stored: u64, computed: u64 },
    #[error("malformed record {index}: {reason}")]
    Malformed { index: usize, reason: &'static str },
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn encode_record(buf: &mut Vec<u8>, s: &GraphSample) {
    buf.extend_from_slice(&s.meta.seed.to_le_bytes());
    buf.extend_from_slice(&s.meta.line_index.to_le_bytes());
    buf.push(s.meta.faulted_end);
    buf.push(s.label);
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&s.meta.clear_time.to_le_bytes());
    buf.extend_from_slice(&s.meta.tsi.to_le_bytes());
    buf.extend_from_slice(&(s.n as u32).to_le_bytes());
    buf.extend_from_slice(&(s.edges.len() as u32).to_le_bytes());
    for &(u, v) in &s.edges {
        buf.extend_from_slice(&u.to_le_bytes());
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in s.features.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DatasetError> {
        if self.pos + n > self.bytes.len() {
            return Err(DatasetError::Truncated);
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, DatasetError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, DatasetError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, DatasetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, DatasetError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode_record(r: &mut Reader<'_>, index: usize) -> Result<GraphSample, DatasetError> {
    let seed = r.u64()?;
    let line_index = r.u32()?;
    let faulted_end = r.u8()?;
    let label = r.u8()?;
    let _pad = r.u16()?;
    let clear_time = r.f64()?;
    let tsi = r.f64()?;
    let n = r.u32()? as usize;
    let n_edges = r.u32()? as usize;
    let mut edges = Vec::with_capacity(n_edges);
    for _ in 0..n_edges {
        edges.push((r.u32()?, r.u32()?));
    }
    let mut features = Vec::with_capacity(n * 2);
    for _ in 0..n * 2 {
        features.push(r.f64()?);
    }
    let sample = GraphSample {
        n,
        edges,
        features: Mat::from_vec(n, 2, features),
        label,
        meta: SampleMeta {
            seed,
            line_index,
            faulted_end,
            clear_time,
            tsi,
        },
    };
    if !sample.check() {
        return Err(DatasetError::Malformed {
            index,
            reason: "structural check failed",
        });
    }
    Ok(sample)
}

/// Serialize a dataset to bytes.
pub fn encode_dataset(samples: &[GraphSample]) -> Vec<u8> {
    let mut records = Vec::new();
    for s in samples {
        encode_record(&mut records, s);
    }
    let mut out = Vec::with_capacity(records.len() + 24);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    out.extend_from_slice(&fnv1a64(&records).to_le_bytes());
    out.extend_from_slice(&records);
    out
}

/// Parse a dataset from bytes, verifying version and checksum.
pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<GraphSample>, DatasetError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(DatasetError::Version(version));
    }
    let _reserved = r.u16()?;
    let count = r.u64()? as usize;
    let stored = r.u64()?;
    let computed = fnv1a64(&bytes[r.pos..]);
    if stored != computed {
        return Err(DatasetError::Checksum { stored, computed });
    }
    let mut samples = Vec::with_capacity(count);
    for index in 0..count {
        samples.push(decode_record(&mut r, index)?);
    }
    if r.pos != bytes.len() {
        return Err(DatasetError::Malformed {
            index: count,
            reason: "trailing bytes after last record",
        });
    }
    Ok(samples)
}

pub fn write_dataset(path: &Path, samples: &[GraphSample]) -> Result<()> {
    std::fs::write(path, encode_dataset(samples))
        .with_context(|| format!("writing dataset {}", path.display()))
}

pub fn read_dataset(path: &Path) -> Result<Vec<GraphSample>> {
    let bytes =
        std::fs::read(path).with_context(|| format!("reading dataset {}", path.display()))?;
    Ok(decode_dataset(&bytes)?)
}
