//! Self-describing training checkpoints.
//!
//! ```text
//! "MGIRCKPT"            8 bytes
//! version               u32 little-endian (currently 1)
//! header length n       u64 little-endian
//! header                n bytes of JSON: config, seed, steps_done,
//!                       scene_shape and the ordered tensor names
//! tensors               one HSC1 blob per name, in header order
//! ```
//!
//! Tensor names are `param/<name>`, `adam.m/<name>` and `adam.v/<name>`.

use std::collections::BTreeMap;
use std::path::Path;

use ndtensor::{Adam, ParameterStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{MgirError, Result};
use crate::hsc;
use crate::train::TrainState;

pub const MAGIC: &[u8; 8] = b"MGIRCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub seed: u64,
    /// Extents `[D, H, W]` of the training scene.
    pub scene_shape: [usize; 3],
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: RunConfig,
    seed: u64,
    steps_done: u64,
    scene_shape: [usize; 3],
    tensors: Vec<String>,
}

fn format_err(offset: usize, detail: impl Into<String>) -> MgirError {
    MgirError::Format {
        kind: "checkpoint",
        offset,
        detail: detail.into(),
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut named: Vec<(String, &Tensor<f32>)> = Vec::new();
        named.extend(self.state.params.iter().map(|(k, v)| (format!("param/{k}"), v)));
        named.extend(self.state.adam.first_moments().iter().map(|(k, v)| (format!("adam.m/{k}"), v)));
        named.extend(self.state.adam.second_moments().iter().map(|(k, v)| (format!("adam.v/{k}"), v)));
        let header = Header {
            config: self.config.clone(),
            seed: self.seed,
            steps_done: self.state.steps_done(),
            scene_shape: self.scene_shape,
            tensors: named.iter().map(|(n, _)| n.clone()).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in named {
            out.extend_from_slice(&hsc::to_bytes(t));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.get(..8) != Some(MAGIC.as_slice()) {
            return Err(format_err(0, "bad magic"));
        }
        let version = bytes
            .get(8..12)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| format_err(8, "truncated version"))?;
        if version != VERSION {
            return Err(format_err(8, format!("unsupported version {version}")));
        }
        let n = bytes
            .get(12..20)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| format_err(12, "truncated header length"))?;
        let end = usize::try_from(n)
            .ok()
            .and_then(|n| 20usize.checked_add(n))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| format_err(12, format!("header length {n} exceeds the file")))?;
        let header: Header = serde_json::from_slice(&bytes[20..end]).map_err(|e| format_err(20, format!("header: {e}")))?;
        header.config.validate()?;

        let mut params = ParameterStore::new();
        let (mut m, mut v) = (BTreeMap::new(), BTreeMap::new());
        let mut at = end;
        for name in &header.tensors {
            let (t, used) = hsc::decode_prefix(&bytes[at..], at)?;
            let bad = || format_err(at, format!("unrecognized tensor name `{name}`"));
            let (kind, key) = name.split_once('/').ok_or_else(bad)?;
            match kind {
                "param" => params.insert(key, t)?,
                "adam.m" => {
                    m.insert(key.to_string(), t);
                }
                "adam.v" => {
                    v.insert(key.to_string(), t);
                }
                _ => return Err(bad()),
            }
            at += used;
        }
        if at != bytes.len() {
            return Err(format_err(at, format!("{} trailing bytes", bytes.len() - at)));
        }
        let adam = Adam::from_state(header.config.train.adam(), header.steps_done, m, v);
        Ok(Self {
            config: header.config,
            seed: header.seed,
            scene_shape: header.scene_shape,
            state: TrainState { params, adam },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        hsc::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| MgirError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn sample() -> Checkpoint {
        let config = RunConfig::toy();
        let params = init_params(&config.model(), 3).unwrap();
        Checkpoint {
            seed: 3,
            scene_shape: [8, 32, 32],
            state: TrainState::new(params, &config.train),
            config,
        }
    }

    #[test]
    fn roundtrip() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corruption_is_located() {
        let bytes = sample().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..5]), Err(MgirError::Format { offset: 0, .. })));
        let mut extra = bytes.clone();
        extra.push(1);
        assert!(matches!(Checkpoint::from_bytes(&extra), Err(MgirError::Format { offset, .. }) if offset == bytes.len()));
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(Checkpoint::from_bytes(cut), Err(MgirError::Format { .. })));
    }
}
