use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Completion, OracleError, SamplingParams};
use crate::fsutil;

/// Everything that determines a response. Field order is alphabetical so
/// the JSON encoding hashed by [`cache_key`] is canonical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyInputs {
    pub backend_id: String,
    pub max_tokens: u32,
    pub model_id: String,
    pub query: String,
    pub temperature: f64,
}

impl KeyInputs {
    pub fn new(backend_id: &str, params: &SamplingParams, query: &str) -> Self {
        Self {
            backend_id: backend_id.to_string(),
            max_tokens: params.max_tokens,
            model_id: params.model_id.clone(),
            query: query.to_string(),
            temperature: params.temperature,
        }
    }

    pub fn digest(&self) -> String {
        let encoded = serde_json::to_vec(self).expect("key inputs serialize");
        hex::encode(Sha256::digest(&encoded))
    }
}

/// SHA-256 over the canonical JSON encoding of all inputs, hex encoded.
pub fn cache_key(backend_id: &str, model_id: &str, params: &SamplingParams, query: &str) -> String {
    let mut inputs = KeyInputs::new(backend_id, params, query);
    inputs.model_id = model_id.to_string();
    inputs.digest()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key_inputs: KeyInputs,
    pub response_text: String,
    pub truncated: bool,
    pub timestamp: u64,
}

/// One JSON file per key under a directory.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, OracleError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)
            .map_err(|e| OracleError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, inputs: &KeyInputs) -> Result<Option<CacheEntry>, OracleError> {
        let path = self.path_for(&inputs.digest());
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(OracleError::Cache(format!("{}: {e}", path.display()))),
        };
        let entry: CacheEntry = serde_json::from_str(&text)
            .map_err(|e| OracleError::Cache(format!("{}: {e}", path.display())))?;
        // a digest collision or hand-edited file must not answer the wrong query
        Ok((entry.key_inputs == *inputs).then_some(entry))
    }

    pub fn put(&self, inputs: &KeyInputs, completion: &Completion) -> Result<(), OracleError> {
        let entry = CacheEntry {
            key_inputs: inputs.clone(),
            response_text: completion.text.clone(),
            truncated: completion.truncated,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let path = self.path_for(&inputs.digest());
        let mut text = serde_json::to_string_pretty(&entry).expect("entry serializes");
        text.push('\n');
        fsutil::write_atomic(&path, text.as_bytes())
            .map_err(|e| OracleError::Cache(format!("{}: {e}", path.display())))
    }

    pub fn len(&self) -> usize {
        std::fs::read_dir(&self.dir)
            .map(|entries| {
                entries
                    .filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
