use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ParamSet, TensorRecord};
use super::NnError;

pub const CHECKPOINT_FORMAT: &str = "amod-params";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Named groups of parameter tensors (`actor`, `critic1`, ...) plus free-form
/// string metadata, stored as one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub meta: BTreeMap<String, String>,
    pub groups: BTreeMap<String, BTreeMap<String, TensorRecord>>,
}

impl Default for Checkpoint {
    fn default() -> Self {
        Self::new()
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            meta: BTreeMap::new(),
            groups: BTreeMap::new(),
        }
    }

    pub fn put(&mut self, group: &str, params: &ParamSet) {
        self.groups.insert(group.to_string(), params.to_record());
    }

    pub fn restore(&self, group: &str, params: &mut ParamSet) -> Result<(), NnError> {
        let rec = self.groups.get(group).ok_or_else(|| NnError::Checkpoint(format!("missing group {group}")))?;
        params.load_record(rec)
    }

    pub fn has_group(&self, group: &str) -> bool {
        self.groups.contains_key(group)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        if let Some(dir) = path.as_ref().parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        let bytes = fs::read(path)?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(NnError::Checkpoint(format!("unknown format {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        Ok(ck)
    }
}
