//! `EMG1` dataset files: magic, five u32 LE header fields
//! `{format_version, N, C, W, K}`, then `N` records of four u16 LE fields
//! `{label, subject, repetition, reserved}` followed by `C·W` LE `f32`
//! samples, channel-major. Samples are stored in single precision.

use std::path::Path;

use super::WindowedDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const EMGB_MAGIC: &[u8; 4] = b"EMG1";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 5 * 4;

fn u16_field(name: &str, v: usize) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::Format(format!("{name} {v} does not fit in u16")))
}

fn u32_field(name: &str, v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{name} {v} does not fit in u32")))
}

pub fn write_emgb(ds: &WindowedDataset) -> Result<Vec<u8>> {
    let (n, c, w) = (ds.len(), ds.channels(), ds.window_len());
    let mut out = Vec::with_capacity(HEADER_LEN + n * (8 + 4 * c * w));
    out.extend_from_slice(EMGB_MAGIC);
    for (name, v) in [("format_version", FORMAT_VERSION as usize), ("N", n), ("C", c), ("W", w), ("K", ds.num_classes)] {
        out.extend_from_slice(&u32_field(name, v)?.to_le_bytes());
    }
    for i in 0..n {
        out.extend_from_slice(&u16_field("label", ds.labels[i])?.to_le_bytes());
        out.extend_from_slice(&ds.subjects[i].to_le_bytes());
        out.extend_from_slice(&ds.repetitions[i].to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        for &v in ds.window_data(i) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_emgb(bytes: &[u8]) -> Result<WindowedDataset> {
    if bytes.len() < 4 || &bytes[..4] != EMGB_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("truncated header: expected {HEADER_LEN} bytes, got {}", bytes.len())));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (version, n, c, w, k) = (field(0), field(1), field(2), field(3), field(4));
    if version != FORMAT_VERSION as usize {
        return Err(Error::Format(format!("unsupported format_version {version}")));
    }
    let record = 8 + 4 * c * w;
    let expected = HEADER_LEN + n * record;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} bytes for {n} windows of [{c}, {w}], got {}",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(n * c * w);
    let (mut labels, mut subjects, mut reps) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for rec in bytes[HEADER_LEN..].chunks_exact(record) {
        let u = |i: usize| u16::from_le_bytes(rec[2 * i..2 * i + 2].try_into().expect("2 bytes"));
        let label = u(0) as usize;
        if label >= k {
            return Err(Error::Format(format!("label {label} is not below declared class count {k}")));
        }
        labels.push(label);
        subjects.push(u(1));
        reps.push(u(2));
        data.extend(rec[8..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64));
    }
    WindowedDataset::new(Tensor::new(vec![n, c, w], data)?, labels, subjects, reps, k)
}

pub fn save_emgb(ds: &WindowedDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_emgb(ds)?).map_err(|e| Error::io(path, e))
}

pub fn load_emgb(path: impl AsRef<Path>) -> Result<WindowedDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_emgb(&bytes)
}
