use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, StratsModel};
use crate::numerics::{ParameterStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STRATSCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the payload.
    pub offset: usize,
}

impl ManifestEntry {
    pub fn byte_len(&self) -> usize {
        self.shape.iter().product::<usize>() * 4
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model_config: ModelConfig,
    manifest: Vec<ManifestEntry>,
    normalizer: Option<Normalizer>,
    metadata: BTreeMap<String, String>,
    payload_len: usize,
    payload_sha256: String,
}

/// Trained weights plus everything needed to reuse them on raw data.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: StratsModel<f32>,
    pub normalizer: Option<Normalizer>,
    /// Free-form lineage (seed, stage, parent checkpoint hash, ...).
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(model: StratsModel<f32>, normalizer: Option<Normalizer>) -> Self {
        Self {
            model,
            normalizer,
            metadata: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut manifest = Vec::new();
        let mut payload = Vec::new();
        for (name, tensor) in self.model.params().iter() {
            manifest.push(ManifestEntry {
                name: name.to_string(),
                shape: tensor.shape().to_vec(),
                dtype: "f32".into(),
                offset: payload.len(),
            });
            for v in tensor.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            model_config: self.model.config().clone(),
            manifest,
            normalizer: self.normalizer.clone(),
            metadata: self.metadata.clone(),
            payload_len: payload.len(),
            payload_sha256: hex::encode(Sha256::digest(&payload)),
        };
        let header = serde_json::to_vec(&header)?;
        let header_len = u32::try_from(header.len())
            .map_err(|_| Error::Checkpoint("header larger than 4 GiB".into()))?;
        let mut out = Vec::with_capacity(14 + header.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 14 {
            return Err(fail("file is truncated"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(fail("not a checkpoint (bad magic bytes)"));
        }
        let version = u16::from_le_bytes([bytes[8], bytes[9]]);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let header_len = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
        let body = &bytes[14..];
        if body.len() < header_len {
            return Err(fail("file is truncated inside the header"));
        }
        let header: Header = serde_json::from_slice(&body[..header_len])
            .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
        let payload = &body[header_len..];
        if payload.len() != header.payload_len {
            return Err(Error::Checkpoint(format!(
                "payload is {} bytes, header declares {}",
                payload.len(),
                header.payload_len
            )));
        }
        let mut expected = 0;
        for entry in &header.manifest {
            if entry.dtype != "f32" {
                return Err(Error::Checkpoint(format!(
                    "unsupported dtype `{}`",
                    entry.dtype
                )));
            }
            if entry.offset != expected {
                return Err(Error::Checkpoint(format!(
                    "manifest entry `{}` at offset {}, expected {expected}",
                    entry.name, entry.offset
                )));
            }
            expected += entry.byte_len();
        }
        if expected != payload.len() {
            return Err(fail("manifest does not cover the payload exactly"));
        }
        if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
            return Err(fail("payload checksum mismatch"));
        }
        let mut store = ParameterStore::new();
        for entry in &header.manifest {
            let data = payload[entry.offset..entry.offset + entry.byte_len()]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            store.insert(&entry.name, Tensor::new(entry.shape.clone(), data)?)?;
        }
        let model = StratsModel::from_params(header.model_config, store)?;
        if model.params().len() != header.manifest.len() {
            return Err(fail("checkpoint holds parameters the model does not use"));
        }
        Ok(Self {
            model,
            normalizer: header.normalizer,
            metadata: header.metadata,
        })
    }
}

/// Writes the checkpoint and returns the SHA-256 of the file.
pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<String> {
    let bytes = checkpoint.to_bytes()?;
    std::fs::write(path, &bytes).map_err(Error::io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    Checkpoint::from_bytes(&bytes)
}

/// Loads a checkpoint and checks it was trained with `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let checkpoint = load_checkpoint(path)?;
    let found = checkpoint.model.config();
    if found != expected {
        return Err(Error::Checkpoint(format!(
            "model config mismatch: checkpoint has {}, requested {}",
            found.fingerprint(),
            expected.fingerprint()
        )));
    }
    Ok(checkpoint)
}

/// SHA-256 of a file, hex encoded.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> StratsModel<f32> {
        let mut c = ModelConfig::new(4, 2);
        c.d = 8;
        c.n_heads = 2;
        StratsModel::new(c, 3).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let ck = Checkpoint::new(model(), Some(Normalizer::identity(4, 2)));
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        for (name, t) in ck.model.params().iter() {
            let u = back.model.params().get(name).unwrap();
            assert_eq!(t.shape(), u.shape());
            let a: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = u.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "{name}");
        }
        assert_eq!(back.normalizer, ck.normalizer);
    }

    #[test]
    fn corruption_and_truncation_are_detected() {
        let bytes = Checkpoint::new(model(), None).to_bytes().unwrap();
        let mut flipped = bytes.clone();
        *flipped.last_mut().unwrap() ^= 0x01;
        assert!(Checkpoint::from_bytes(&flipped).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());
        let mut version = bytes.clone();
        version[8] = 9;
        assert!(Checkpoint::from_bytes(&version).is_err());
    }
}
