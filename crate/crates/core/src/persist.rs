//! Versioned JSON envelopes for trained models.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<M> {
    format: String,
    version: u32,
    model: M,
}

pub fn to_json<M: Serialize>(kind: &str, model: &M) -> Result<String> {
    Ok(serde_json::to_string(&Envelope { format: kind.to_string(), version: FORMAT_VERSION, model })?)
}

pub fn from_json<M: DeserializeOwned>(kind: &str, s: &str) -> Result<M> {
    let env: Envelope<M> = serde_json::from_str(s)?;
    if env.format != kind {
        return Err(Error::Model(format!("expected a '{kind}' dump, found '{}'", env.format)));
    }
    if env.version != FORMAT_VERSION {
        return Err(Error::Model(format!("unsupported model format version {}", env.version)));
    }
    Ok(env.model)
}

pub fn save<M: Serialize>(kind: &str, model: &M, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_json(kind, model)?)?;
    Ok(())
}

pub fn load<M: DeserializeOwned>(kind: &str, path: impl AsRef<Path>) -> Result<M> {
    from_json(kind, &std::fs::read_to_string(path)?)
}
