//! `TSW1` checkpoints: magic, u32 LE header length, JSON header
//! `{format_version, config, manifest}`, then every parameter as LE `f64`
//! in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build, AblationFlags, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TSW1";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    manifest: Vec<ManifestEntry>,
}

pub fn write_checkpoint(params: &ModelParams, config: &ModelConfig) -> Result<Vec<u8>> {
    let named = params.named();
    let header = Header {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        manifest: named
            .iter()
            .map(|(name, t)| ManifestEntry { name: name.clone(), shape: t.shape().to_vec() })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let payload: usize = named.iter().map(|(_, t)| t.numel()).sum();
    let mut out = Vec::with_capacity(8 + json.len() + 8 * payload);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let len = u32::try_from(json.len()).map_err(|_| Error::Format("header too large".into()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &named {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn flags_from_manifest(manifest: &[ManifestEntry]) -> AblationFlags {
    let has = |prefix: &str| manifest.iter().any(|e| e.name.starts_with(prefix));
    AblationFlags {
        enable_stream_a: has("stream_a."),
        enable_stream_b: has("stream_b."),
        enable_stream_c: has("stream_c."),
        enable_attention: has("attention."),
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(ModelParams, ModelConfig)> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    if bytes.len() < 8 {
        return Err(Error::Format("truncated header length".into()));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let json = bytes.get(8..8 + len).ok_or_else(|| Error::Format("truncated header".into()))?;
    let header: Header =
        serde_json::from_slice(json).map_err(|e| Error::Format(format!("malformed header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format_version {}", header.format_version)));
    }
    let flags = flags_from_manifest(&header.manifest);
    let template = build(&header.config, &flags, &RngState::new(0))?;
    let expected = template.named();
    if expected.len() != header.manifest.len() {
        return Err(Error::Format(format!(
            "manifest lists {} tensors, config implies {}",
            header.manifest.len(),
            expected.len()
        )));
    }
    for ((name, t), entry) in expected.iter().zip(&header.manifest) {
        if *name != entry.name || t.shape() != entry.shape.as_slice() {
            return Err(Error::Format(format!(
                "manifest entry {} {:?} disagrees with config ({} {:?})",
                entry.name,
                entry.shape,
                name,
                t.shape()
            )));
        }
    }
    let mut payload = &bytes[8 + len..];
    let mut tensors = Vec::with_capacity(expected.len());
    for entry in &header.manifest {
        let n: usize = entry.shape.iter().product();
        if payload.len() < 8 * n {
            return Err(Error::Format(format!("truncated payload in {}", entry.name)));
        }
        let (chunk, rest) = payload.split_at(8 * n);
        let data = chunk.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        tensors.push(Tensor::new(entry.shape.clone(), data)?);
        payload = rest;
    }
    if !payload.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after payload", payload.len())));
    }
    Ok((template.with_tensors(tensors)?, header.config))
}

pub fn save(params: &ModelParams, config: &ModelConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_checkpoint(params, config)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(ModelParams, ModelConfig)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (ModelParams, ModelConfig) {
        let mut config = ModelConfig::new(2, 8, 3);
        config.stream_a.filters = 2;
        config.stream_b.separable_filters = 4;
        config.stream_c.filters = 2;
        config.stream_c.lstm_hidden = 2;
        let flags = AblationFlags { enable_stream_c: false, ..Default::default() };
        (build(&config, &flags, &RngState::new(3)).unwrap(), config)
    }

    #[test]
    fn roundtrip_is_byte_exact() {
        let (p, c) = small();
        let bytes = write_checkpoint(&p, &c).unwrap();
        let (p2, c2) = read_checkpoint(&bytes).unwrap();
        assert_eq!(p2, p);
        assert_eq!(c2, c);
        assert_eq!(write_checkpoint(&p2, &c2).unwrap(), bytes);
        assert!(p2.stream_c.is_none());
    }

    #[test]
    fn layout() {
        let (p, c) = small();
        let bytes = write_checkpoint(&p, &c).unwrap();
        assert_eq!(&bytes[..4], b"TSW1");
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + len]).unwrap();
        assert_eq!(header["format_version"], 1);
        let first = &p.tensors()[0];
        assert_eq!(header["manifest"][0]["shape"], serde_json::json!(first.shape()));
        let v = f64::from_le_bytes(bytes[8 + len..16 + len].try_into().unwrap());
        assert_eq!(v, first.data()[0]);
        assert_eq!(bytes.len(), 8 + len + 8 * p.num_params());
    }

    #[test]
    fn corrupt_files_rejected() {
        let (p, c) = small();
        let bytes = write_checkpoint(&p, &c).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad).unwrap_err().to_string().contains("bad magic"));
        assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_checkpoint(&extra).is_err());
        assert!(read_checkpoint(&bytes[..6]).is_err());
    }

    #[test]
    fn shape_disagreement_rejected() {
        let (p, c) = small();
        let mut other = c.clone();
        other.num_classes = 4;
        // header claims K=4 while the payload holds K=3 classifier weights
        let bytes = write_checkpoint(&p, &other).unwrap();
        let err = read_checkpoint(&bytes).unwrap_err();
        assert!(err.to_string().contains("classifier"), "{err}");
    }
}
