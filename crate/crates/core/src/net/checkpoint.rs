//! Single-file weight checkpoints: magic, manifest length, JSON manifest,
//! then little-endian f32 buffers in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, NetConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GRADPS01";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: NetConfig,
    parameters: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: [usize; 4],
}

impl Model {
    pub fn save(&self, path: &Path) -> Result<()> {
        let manifest = Manifest {
            config: self.config.clone(),
            parameters: self
                .params
                .names()
                .iter()
                .zip(self.params.values())
                .map(|(name, t)| Entry {
                    name: name.clone(),
                    shape: t.shape,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| Error::BadCheckpoint(e.to_string()))?;
        let mut bytes = Vec::with_capacity(16 + json.len() + 4 * self.params.scalar_count());
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&json);
        for t in self.params.values() {
            for v in &t.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |why: &str| Error::BadCheckpoint(format!("{}: {why}", path.display()));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
        let mut model = Model::new(manifest.config)?;
        if manifest.parameters.len() != model.params.len() {
            return Err(bad("parameter list does not match the configuration"));
        }
        let mut offset = 16 + len;
        let (names, values) = (model.params.names().to_vec(), model.params.values_mut());
        for ((entry, name), t) in manifest.parameters.iter().zip(&names).zip(values) {
            if &entry.name != name || entry.shape != t.shape {
                return Err(bad(&format!("unexpected parameter {} {:?}", entry.name, entry.shape)));
            }
            let n = t.data.len() * 4;
            let raw = bytes.get(offset..offset + n).ok_or_else(|| bad("truncated weights"))?;
            for (v, chunk) in t.data.iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
            offset += n;
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(model)
    }

    /// Loads a checkpoint and checks its architecture against `expected`.
    pub fn load_expecting(path: &Path, expected: &NetConfig) -> Result<Self> {
        let model = Self::load(path)?;
        if !model.config.same_architecture(expected) {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint {} was built for {:?}, expected {:?}",
                path.display(),
                model.config,
                expected
            )));
        }
        Ok(model)
    }
}
