//! Checkpoint directory: `manifest.json` plus one raw little-endian `f64`
//! file per parameter array under `params/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "moelab-checkpoint-v1";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Element offset of this array in the concatenation of all arrays in
    /// manifest order.
    pub offset: usize,
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointManifest {
    pub format: String,
    pub step: u64,
    pub config: ModelConfig,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Checkpoint {
    /// Write to `dir` atomically: files go to a sibling temp directory that
    /// is renamed into place, so an interrupted save never clobbers an
    /// existing checkpoint. `extra` files are stored next to the manifest.
    pub fn save(&self, dir: &Path, extra: &[(&str, &[u8])]) -> Result<()> {
        let tmp = dir.with_extension("partial");
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(tmp.display().to_string(), e))?;
        }
        fs::create_dir_all(tmp.join("params"))
            .map_err(|e| Error::io(tmp.display().to_string(), e))?;

        let mut entries = Vec::new();
        let mut offset = 0;
        for (name, t) in self.params.iter() {
            let file = format!("params/{name}.f64");
            let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            let path = tmp.join(&file);
            fs::write(&path, bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
            entries.push(ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
                file,
            });
            offset += t.len();
        }
        let manifest = CheckpointManifest {
            format: FORMAT.to_string(),
            step: self.step,
            config: self.config.clone(),
            params: entries,
        };
        let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json(MANIFEST, e))?;
        fs::write(tmp.join(MANIFEST), json).map_err(|e| Error::io(MANIFEST, e))?;
        for (name, bytes) in extra {
            fs::write(tmp.join(name), bytes).map_err(|e| Error::io(name.to_string(), e))?;
        }

        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
        fs::rename(&tmp, dir).map_err(|e| Error::io(dir.display().to_string(), e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST);
        let raw = fs::read(&mpath).map_err(|e| Error::io(mpath.display().to_string(), e))?;
        let manifest: CheckpointManifest =
            serde_json::from_slice(&raw).map_err(|e| Error::json(mpath.display().to_string(), e))?;
        if manifest.format != FORMAT {
            return Err(Error::contract(format!(
                "unknown checkpoint format `{}`",
                manifest.format
            )));
        }
        manifest.config.validate()?;
        let mut entries = BTreeMap::new();
        for p in &manifest.params {
            let path = dir.join(&p.file);
            let bytes = fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
            let n: usize = p.shape.iter().product();
            if bytes.len() != n * 8 {
                return Err(Error::Parse {
                    offset: bytes.len() as u64,
                    detail: format!("{}: expected {} bytes", p.file, n * 8),
                });
            }
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            entries.insert(p.name.clone(), Tensor::new(p.shape.clone(), data)?);
        }
        Ok(Checkpoint {
            step: manifest.step,
            config: manifest.config,
            params: ParamStore::from_entries(entries),
        })
    }
}
