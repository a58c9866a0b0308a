//! Checkpoint container.
//!
//! Layout: the 8-byte magic `ITRCKPT\0`, a little-endian `u64` header length,
//! a JSON header, then every array listed in the header, in order, as
//! little-endian `f32`. The header carries `format_version`, `d`, the array
//! names and shapes, an echo of the run configuration, and (for training
//! checkpoints) the optimizer, scheduler, replay buffer and counters.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{RetrieverModel, PARAM_NAMES};
use crate::trainer::{TrainerProgress, TrainerState};

const MAGIC: &[u8; 8] = b"ITRCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    d: usize,
    beta: f64,
    arrays: Vec<ArrayEntry>,
    config: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trainer: Option<TrainerProgress>,
}

pub type NamedArray = (String, Vec<usize>, Vec<f64>);

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: RetrieverModel,
    pub config: Value,
    pub progress: Option<TrainerProgress>,
}

impl Checkpoint {
    pub fn from_model(model: RetrieverModel, config: Value) -> Self {
        Self {
            model,
            config,
            progress: None,
        }
    }

    /// Snapshot of a training run. Call [`TrainerState::round_for_checkpoint`]
    /// first if the run should continue bit-identically after a resume.
    pub fn from_state(state: &TrainerState, config: Value) -> Self {
        Self {
            model: state.model.clone(),
            config,
            progress: Some(state.progress()),
        }
    }

    pub fn into_state(self) -> Result<TrainerState> {
        let progress = self
            .progress
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no trainer state".into()))?;
        Ok(TrainerState::from_progress(self.model, progress))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut arrays = self.model.to_named();
        if let Some(p) = &self.progress {
            for (prefix, moments) in [("adam.m.", &p.adam.m), ("adam.v.", &p.adam.v)] {
                for ((name, shape, _), values) in self.model.to_named().into_iter().zip(moments) {
                    arrays.push((format!("{prefix}{name}"), shape, values.clone()));
                }
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            d: self.model.dim(),
            beta: self.model.policy.beta,
            arrays: arrays
                .iter()
                .map(|(name, shape, _)| ArrayEntry {
                    name: name.clone(),
                    shape: shape.clone(),
                })
                .collect(),
            config: self.config.clone(),
            trainer: self.progress.clone(),
        };
        write_container(path, &serde_json::to_vec(&header)?, &arrays)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header_bytes, blob) = read_container(path)?;
        let header: Header = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: unreadable header: {e}", path.display())))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: format_version {} is not supported (expected {FORMAT_VERSION})",
                path.display(),
                header.format_version
            )));
        }
        let arrays = decode_arrays(&header.arrays, &blob)?;
        let model = RetrieverModel::from_named(&arrays, header.beta)?;
        if model.dim() != header.d {
            return Err(Error::Checkpoint(format!(
                "header says d = {} but arrays have d = {}",
                header.d,
                model.dim()
            )));
        }
        let progress = match header.trainer {
            Some(mut p) => {
                let moment = |prefix: &str| -> Result<Vec<Vec<f64>>> {
                    PARAM_NAMES
                        .iter()
                        .map(|name| {
                            let key = format!("{prefix}{name}");
                            arrays
                                .iter()
                                .find(|(n, _, _)| *n == key)
                                .map(|(_, _, v)| v.clone())
                                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer array {key}")))
                        })
                        .collect()
                };
                p.adam.m = moment("adam.m.")?;
                p.adam.v = moment("adam.v.")?;
                Some(p)
            }
            None => None,
        };
        Ok(Self {
            model,
            config: header.config,
            progress,
        })
    }
}

fn write_container(path: &Path, header: &[u8], arrays: &[NamedArray]) -> Result<()> {
    let total: usize = arrays.iter().map(|(_, _, v)| v.len()).sum();
    let mut buf = Vec::with_capacity(16 + header.len() + 4 * total);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(header);
    for (_, _, values) in arrays {
        for &x in values {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    let tmp = path.with_extension("partial");
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(format!("creating {}", tmp.display()), e))?;
    file.write_all(&buf)
        .and_then(|_| file.sync_all())
        .map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}

fn read_container(path: &Path) -> Result<(Vec<u8>, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint file", path.display())));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if header_len > body.len() {
        return Err(Error::Checkpoint(format!("{}: truncated header", path.display())));
    }
    Ok((body[..header_len].to_vec(), body[header_len..].to_vec()))
}

fn decode_arrays(entries: &[ArrayEntry], blob: &[u8]) -> Result<Vec<NamedArray>> {
    let needed: usize = entries.iter().map(|e| 4 * e.shape.iter().product::<usize>()).sum();
    if needed != blob.len() {
        return Err(Error::Checkpoint(format!(
            "array data holds {} bytes but the header describes {needed}",
            blob.len()
        )));
    }
    let mut offset = 0;
    Ok(entries
        .iter()
        .map(|e| {
            let n: usize = e.shape.iter().product();
            let values = blob[offset..offset + 4 * n]
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect();
            offset += 4 * n;
            (e.name.clone(), e.shape.clone(), values)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InitScheme;
    use crate::trainer::TrainerConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use serde_json::json;

    #[test]
    fn rounded_model_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = RetrieverModel::new(7, 0.5, InitScheme::Uniform, &mut rng).unwrap();
        model.round_to_f32();
        let path = dir.path().join("m.ckpt");
        Checkpoint::from_model(model.clone(), json!({"seed": 5})).save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(back.config["seed"], 5);
        assert!(back.progress.is_none());
    }

    #[test]
    fn trainer_state_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = RetrieverModel::new(3, 1.0, InitScheme::Uniform, &mut rng).unwrap();
        let mut state = TrainerState::new(model, &TrainerConfig::default());
        state.adam.m[4][2] = 0.125;
        state.adam.v[12][0] = 3.3;
        state.iteration = 9;
        state.episode_returns = vec![0.1, 0.30000000000000004];
        state.round_for_checkpoint();
        let path = dir.path().join("t.ckpt");
        Checkpoint::from_state(&state, json!({})).save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap().into_state().unwrap();
        assert_eq!(back.model, state.model);
        assert_eq!(back.adam, state.adam);
        assert_eq!(back.adam.m, state.adam.m);
        assert_eq!(back.adam.v, state.adam.v);
        assert_eq!(back.iteration, 9);
        assert_eq!(back.episode_returns, state.episode_returns);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }
}
