//! Checkpoint files.
//!
//! ```text
//! DXCKPT v1 <header-bytes>\n
//! <JSON header: config, metadata, [{name, shape, offset, bytes}]>
//! <concatenated DXTENSOR records; offsets are relative to the first>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::weights::ModelWeights;
use crate::tensor::Tensor;

const MAGIC: &str = "DXCKPT";
const VERSION: &str = "v1";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    bytes: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    dtype: String,
    #[serde(default)]
    metadata: serde_json::Value,
    tensors: Vec<Entry>,
}

/// A loaded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub weights: ModelWeights<f32>,
    pub metadata: serde_json::Value,
}

pub fn checkpoint_bytes(cfg: &ModelConfig, weights: &ModelWeights<f32>, metadata: serde_json::Value) -> Result<Vec<u8>> {
    ModelWeights::from_map(cfg, weights.iter().map(|(k, v)| (k.clone(), v.clone())).collect())?;
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in weights.iter() {
        let bytes = t.to_dump_bytes();
        tensors.push(Entry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: payload.len(),
            bytes: bytes.len(),
        });
        payload.extend(bytes);
    }
    let header = Header {
        config: cfg.clone(),
        dtype: "f32".into(),
        metadata,
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Malformed(e.to_string()))?;
    let mut out = format!("{MAGIC} {VERSION} {}\n", json.len()).into_bytes();
    out.extend(json);
    out.extend(payload);
    Ok(out)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Malformed("checkpoint has no header line".into()))?;
    let line = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::Malformed("header line is not text".into()))?;
    let parts: Vec<&str> = line.split(' ').collect();
    let [magic, version, len] = parts[..] else {
        return Err(Error::Malformed(format!("bad checkpoint header {line:?}")));
    };
    if magic != MAGIC {
        return Err(Error::Malformed(format!("not a checkpoint (magic {magic:?})")));
    }
    if version != VERSION {
        return Err(Error::UnsupportedFormat(format!("checkpoint version {version}")));
    }
    let len: usize = len
        .parse()
        .map_err(|_| Error::Malformed(format!("bad header length {len:?}")))?;
    let body = &bytes[nl + 1..];
    if body.len() < len {
        return Err(Error::Malformed("truncated checkpoint header".into()));
    }
    let header: Header = serde_json::from_slice(&body[..len]).map_err(|e| Error::Malformed(e.to_string()))?;
    if header.dtype != "f32" {
        return Err(Error::UnsupportedFormat(format!("checkpoint dtype {}", header.dtype)));
    }
    let payload = &body[len..];
    let mut map = BTreeMap::new();
    for e in &header.tensors {
        let end = e.offset.checked_add(e.bytes).filter(|&end| end <= payload.len());
        let end = end.ok_or_else(|| Error::Malformed(format!("array {} lies outside the payload", e.name)))?;
        let t = Tensor::<f32>::read_dump(&mut Cursor::new(&payload[e.offset..end]))?;
        if t.shape() != e.shape.as_slice() {
            return Err(Error::Malformed(format!("array {} shape disagrees with its table entry", e.name)));
        }
        map.insert(e.name.clone(), t);
    }
    let weights = ModelWeights::from_map(&header.config, map)?;
    Ok(Checkpoint {
        config: header.config,
        weights,
        metadata: header.metadata,
    })
}

pub fn save_checkpoint(
    path: &Path,
    cfg: &ModelConfig,
    weights: &ModelWeights<f32>,
    metadata: serde_json::Value,
) -> Result<()> {
    fs::write(path, checkpoint_bytes(cfg, weights, metadata)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    parse_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig::tiny();
        let w = ModelWeights::<f32>::init(&cfg, 3).unwrap();
        let bytes = checkpoint_bytes(&cfg, &w, serde_json::json!({"step": 5})).unwrap();
        let ck = parse_checkpoint(&bytes).unwrap();
        assert_eq!(ck.config, cfg);
        assert_eq!(ck.weights, w);
        assert_eq!(ck.metadata["step"], 5);
        assert!(bytes.starts_with(b"DXCKPT v1 "));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let cfg = ModelConfig::tiny();
        let w = ModelWeights::<f32>::zeros(&cfg).unwrap();
        let bytes = checkpoint_bytes(&cfg, &w, serde_json::Value::Null).unwrap();
        assert!(matches!(parse_checkpoint(&bytes[..bytes.len() - 3]), Err(Error::Malformed(_))));
        assert!(matches!(parse_checkpoint(b"garbage"), Err(Error::Malformed(_))));
        let mut v2 = bytes.clone();
        v2[8] = b'2';
        assert!(matches!(parse_checkpoint(&v2), Err(Error::UnsupportedFormat(_))));
    }
}
