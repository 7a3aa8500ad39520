//! Checkpoint file: JSON manifest (names, shapes, schema version, config
//! hash, model-specific extras) followed by a packed little-endian float32
//! parameter blob.

use crate::optim::ParamSet;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"TCKP";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("schema mismatch: file has {found}, expected {expected}")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("manifest error: {0}")]
    Manifest(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    schema_version: u32,
    config_hash: String,
    entries: Vec<(String, Vec<usize>)>,
    extra: serde_json::Value,
}

/// Write parameters plus a serializable `extra` payload (normalization
/// stats, architecture description).
pub fn save_checkpoint<E: Serialize>(
    params: &ParamSet,
    config_hash: &str,
    extra: &E,
    path: &Path,
) -> Result<(), CheckpointError> {
    let manifest = CheckpointManifest {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        config_hash: config_hash.to_string(),
        entries: params
            .iter_values()
            .map(|(name, t)| (name.clone(), t.shape().to_vec()))
            .collect(),
        extra: serde_json::to_value(extra).map_err(|e| CheckpointError::Manifest(e.to_string()))?,
    };
    let manifest_bytes =
        serde_json::to_vec(&manifest).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(&manifest_bytes);
    for (_, t) in params.iter_values() {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Load a checkpoint; returns the parameters, the stored config hash, and
/// the deserialized extra payload.
pub fn load_checkpoint<E: for<'de> Deserialize<'de>>(
    path: &Path,
) -> Result<(ParamSet, String, E), CheckpointError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != MAGIC {
        return Err(CheckpointError::Corrupt("bad magic".into()));
    }
    let mlen = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + mlen {
        return Err(CheckpointError::Corrupt("truncated manifest".into()));
    }
    let manifest: CheckpointManifest = serde_json::from_slice(&bytes[12..12 + mlen])
        .map_err(|e| CheckpointError::Corrupt(format!("manifest json: {e}")))?;
    if manifest.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(CheckpointError::SchemaMismatch {
            found: manifest.schema_version,
            expected: CHECKPOINT_SCHEMA_VERSION,
        });
    }
    let mut params = ParamSet::new();
    let mut off = 12 + mlen;
    for (name, shape) in &manifest.entries {
        let n: usize = shape.iter().product();
        let end = off + 4 * n;
        if end > bytes.len() {
            return Err(CheckpointError::Corrupt(format!("truncated blob at {name}")));
        }
        let data: Vec<f32> = bytes[off..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(name, Tensor::from_vec(shape, data));
        off = end;
    }
    if off != bytes.len() {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    let extra: E = serde_json::from_value(manifest.extra)
        .map_err(|e| CheckpointError::Corrupt(format!("extra payload: {e}")))?;
    Ok((params, manifest.config_hash, extra))
}

/// Content hash of the parameter blob, for determinism checks.
pub fn params_digest(params: &ParamSet) -> String {
    use std::fmt::Write as _;
    // FNV-1a over the little-endian bytes; stable and dependency-free.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (name, t) in params.iter_values() {
        for b in name.as_bytes() {
            h = (h ^ *b as u64).wrapping_mul(0x1000_0000_01b3);
        }
        for v in t.data() {
            for b in v.to_le_bytes() {
                h = (h ^ b as u64).wrapping_mul(0x1000_0000_01b3);
            }
        }
    }
    let mut s = String::new();
    write!(s, "{h:016x}").unwrap();
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct Extra {
        note: String,
        scale: Vec<f32>,
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut ps = ParamSet::new();
        ps.insert("net.w1", Tensor::uniform(&[4, 3], 1.0, &mut rng));
        ps.insert("net.b1", Tensor::uniform(&[3], 1.0, &mut rng));
        let extra = Extra { note: "stats".into(), scale: vec![1.0, 2.0] };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&ps, "hash123", &extra, &path).unwrap();
        let (loaded, hash, extra2): (ParamSet, String, Extra) = load_checkpoint(&path).unwrap();
        assert_eq!(hash, "hash123");
        assert_eq!(extra, extra2);
        assert_eq!(params_digest(&ps), params_digest(&loaded));
        assert_eq!(ps.get("net.w1"), loaded.get("net.w1"));
    }

    #[test]
    fn truncated_checkpoint_detected() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::zeros(&[8]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&ps, "h", &serde_json::json!({}), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let out: Result<(ParamSet, String, serde_json::Value), _> = load_checkpoint(&path);
        assert!(matches!(out, Err(CheckpointError::Corrupt(_))));
    }
}
