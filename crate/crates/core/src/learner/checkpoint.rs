//! Parameter files.
//!
//! Layout: 8-byte magic, little-endian `u32` format version, the 32-byte
//! SHA-256 of the network spec, then a bincode body holding the species
//! learner. Files written for a different architecture refuse to load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PolicySpec, SpeciesLearner};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MALTHUSP";
const VERSION: u32 = 1;

pub fn spec_hash(spec: &PolicySpec) -> [u8; 32] {
    let text = serde_json::to_string(spec).expect("policy spec serializes");
    let mut h = Sha256::new();
    h.update(b"malthus-policy-v1\n");
    h.update(text.as_bytes());
    h.finalize().into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub spec: PolicySpec,
    pub learner: SpeciesLearner,
}

pub fn encode_params(spec: &PolicySpec, learner: &SpeciesLearner) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&spec_hash(spec));
    let body = ParamsFile {
        spec: spec.clone(),
        learner: learner.clone(),
    };
    out.extend(bincode::serialize(&body).expect("learner state serializes"));
    out
}

pub fn decode_params(bytes: &[u8], expected: &PolicySpec) -> Result<SpeciesLearner> {
    if bytes.len() < 44 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a parameter file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported parameter file version {version}")));
    }
    if bytes[12..44] != spec_hash(expected) {
        return Err(Error::Checkpoint("parameter file was written for a different network spec".into()));
    }
    let body: ParamsFile =
        bincode::deserialize(&bytes[44..]).map_err(|e| Error::Checkpoint(format!("corrupt parameter file: {e}")))?;
    if &body.spec != expected {
        return Err(Error::Checkpoint("embedded spec disagrees with header hash".into()));
    }
    Ok(body.learner)
}

pub fn save_params(path: &Path, spec: &PolicySpec, learner: &SpeciesLearner) -> Result<()> {
    fs::write(path, encode_params(spec, learner)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path, expected: &PolicySpec) -> Result<SpeciesLearner> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes, expected)
}
