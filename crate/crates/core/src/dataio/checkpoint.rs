use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container::{decode_entries, encode_entries, Entry, VERSION};
use super::{io_err, write_atomic, DataError};
use crate::gradcore::{AdamConfig, AdamState, ModelParams, Tensor};
use crate::vesselnet::{NetError, NetworkConfig, VesselNet};

pub const CHECKPOINT_VERSION: u32 = VERSION;

const META: &str = "meta";
const PARAM: &str = "param/";
const BUFFER: &str = "buffer/";
const FIRST_MOMENT: &str = "adam.m/";
const SECOND_MOMENT: &str = "adam.v/";

/// Everything needed to rebuild a network and, optionally, resume its optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: NetworkConfig,
    /// Optimizer steps taken when the checkpoint was written.
    pub step: u64,
    pub params: ModelParams,
    pub adam: Option<AdamState>,
}

/// JSON metadata stored as the `meta` byte entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub network: NetworkConfig,
    pub step: u64,
    pub adam: Option<AdamConfig>,
    #[serde(default)]
    pub adam_step: u64,
}

impl Checkpoint {
    pub fn new(net: &VesselNet, adam: Option<&AdamState>) -> Self {
        Self {
            network: net.config.clone(),
            step: adam.map_or(0, |a| a.step_count),
            params: net.params.clone(),
            adam: adam.cloned(),
        }
    }

    pub fn network(&self) -> Result<VesselNet, NetError> {
        VesselNet::from_params(self.network.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = CheckpointMeta {
            network: self.network.clone(),
            step: self.step,
            adam: self.adam.as_ref().map(|a| a.config.clone()),
            adam_step: self.adam.as_ref().map_or(0, |a| a.step_count),
        };
        let json = serde_json::to_vec(&meta).expect("metadata serializes");
        let mut entries = vec![Entry::bytes(META, json)];
        let mut push = |prefix: &str, map: &BTreeMap<String, Tensor>| {
            entries.extend(map.iter().map(|(n, t)| Entry::tensor(format!("{prefix}{n}"), t)));
        };
        push(PARAM, &self.params.tensors);
        push(BUFFER, &self.params.buffers);
        if let Some(a) = &self.adam {
            push(FIRST_MOMENT, &a.first_moment);
            push(SECOND_MOMENT, &a.second_moment);
        }
        encode_entries(&entries)
    }

    /// `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, DataError> {
        let malformed = |message: String| DataError::Malformed {
            path: path.to_path_buf(),
            message,
        };
        let mut meta = None;
        let mut params = ModelParams::default();
        let mut first = BTreeMap::new();
        let mut second = BTreeMap::new();
        for e in decode_entries(bytes, path)? {
            if e.name == META {
                let super::Payload::Bytes(b) = &e.payload else {
                    return Err(malformed("`meta` entry is not a byte entry".into()));
                };
                let m: CheckpointMeta =
                    serde_json::from_slice(b).map_err(|err| malformed(format!("`meta` entry: {err}")))?;
                meta = Some(m);
                continue;
            }
            let tensor = e
                .to_tensor()
                .ok_or_else(|| malformed(format!("`{}` is not a tensor of rank at most 4", e.name)))?;
            let (map, key) = [
                (PARAM, &mut params.tensors),
                (BUFFER, &mut params.buffers),
                (FIRST_MOMENT, &mut first),
                (SECOND_MOMENT, &mut second),
            ]
            .into_iter()
            .find_map(|(prefix, map)| e.name.strip_prefix(prefix).map(|k| (map, k.to_string())))
            .ok_or_else(|| malformed(format!("unknown entry `{}`", e.name)))?;
            if map.insert(key, tensor).is_some() {
                return Err(malformed(format!("duplicate entry `{}`", e.name)));
            }
        }
        let meta = meta.ok_or_else(|| malformed("no `meta` entry".into()))?;
        let adam = match meta.adam {
            Some(config) => Some(AdamState {
                config,
                first_moment: first,
                second_moment: second,
                step_count: meta.adam_step,
            }),
            None if first.is_empty() && second.is_empty() => None,
            None => return Err(malformed("optimizer moments without optimizer settings".into())),
        };
        Ok(Self {
            network: meta.network,
            step: meta.step,
            params,
            adam,
        })
    }
}

/// Atomic write: the previous file at `path` survives a failed save.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), DataError> {
    write_atomic(path, &ckpt.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, DataError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Checkpoint::from_bytes(&bytes, path)
}
