//! Run manifest: everything needed to repeat a command exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_VERSION: &str = "deepverify-manifest/1";
pub const REPORT_FORMAT: &str = "deepverify-report/1";
pub const MODEL_FORMAT: &str = "deepverify-model/1";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(name: &str, bytes: &[u8]) -> Self {
        FileDigest {
            name: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        }
    }
}

/// Contains no timestamps or absolute paths, so repeated runs produce the
/// same manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: String,
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    /// Effective configuration, in the config file syntax.
    pub config: String,
    pub config_sha256: String,
    /// Hash of the config file as given, if one was.
    pub source_config_sha256: Option<String>,
    pub formats: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: String, source_config: Option<&[u8]>) -> Self {
        let mut formats = BTreeMap::new();
        formats.insert("embeddings".to_string(), deepverify_core::emb1::FORMAT_VERSION.to_string());
        formats.insert("report".to_string(), REPORT_FORMAT.to_string());
        formats.insert("model".to_string(), MODEL_FORMAT.to_string());
        Manifest {
            manifest_version: MANIFEST_VERSION.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config_sha256: sha256_hex(config.as_bytes()),
            config,
            source_config_sha256: source_config.map(sha256_hex),
            formats,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
