//! Snapshots and storage backends.
//!
//! A snapshot is the world's [`WorldState`] plus a format version, written
//! as canonical JSON (compact, keys sorted at every depth) and framed as
//!
//! ```text
//! {"checksum":"<sha-256 of the body, hex>","snapshot":<body>}
//! ```
//!
//! Persistent resources such as the message broker's pending deliveries
//! and subscriptions travel inside the state's `resources` map. The same
//! world captured twice without a tick in between yields identical bytes.

mod backend;
mod canonical;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub use backend::{snapshot_name, tick_of, FileBackend, MemoryBackend, StorageBackend};
pub use canonical::to_canonical_vec;

use crate::ecs::{EcsError, World, WorldState};

pub const FORMAT_VERSION: u32 = 1;

const PREFIX: &[u8] = br#"{"checksum":""#;
const MIDDLE: &[u8] = br#"","snapshot":"#;
const CHECKSUM_HEX: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Snapshot {
    pub format_version: u32,
    #[serde(flatten)]
    pub state: WorldState,
}

impl Snapshot {
    pub fn tick(&self) -> u64 {
        self.state.tick
    }

    pub fn rng_seed(&self) -> u64 {
        self.state.rng_seed
    }

    /// Broker state (pending deliveries and subscriptions), if messaging
    /// was installed.
    pub fn broker(&self) -> Option<&Value> {
        self.state.resources.get(crate::messaging::RESOURCE_NAME)?.get("broker")
    }
}

/// Canonical bytes of a snapshot together with their checksum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSnapshot {
    pub tick: u64,
    /// Lower-case hex SHA-256 of the body.
    pub checksum: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, thiserror::Error)]
pub enum PersistenceError {
    #[error("checksum mismatch: {0}")]
    ChecksumMismatch(String),
    #[error("unsupported snapshot format version {0}")]
    UnsupportedVersion(u64),
    #[error("malformed snapshot: {0}")]
    Malformed(String),
    #[error(transparent)]
    Ecs(#[from] EcsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PersistenceError {
    pub fn code(&self) -> &'static str {
        match self {
            PersistenceError::ChecksumMismatch(_) => "checksum-mismatch",
            PersistenceError::UnsupportedVersion(_) => "unsupported-version",
            PersistenceError::Malformed(_) => "malformed-snapshot",
            PersistenceError::Ecs(_) => "restore-failed",
            PersistenceError::Io(_) => "storage-error",
        }
    }
}

/// Captures `world`. Must be called between ticks.
pub fn snapshot(world: &World) -> Result<Snapshot, PersistenceError> {
    if world.is_ticking() {
        return Err(PersistenceError::Ecs(EcsError::ReentrantTick));
    }
    Ok(Snapshot { format_version: FORMAT_VERSION, state: world.capture()? })
}

pub fn encode(snapshot: &Snapshot) -> Result<EncodedSnapshot, PersistenceError> {
    let value = serde_json::to_value(snapshot).map_err(|e| PersistenceError::Malformed(e.to_string()))?;
    let body = to_canonical_vec(&value);
    let checksum = hex::encode(Sha256::digest(&body));
    let mut bytes = Vec::with_capacity(PREFIX.len() + CHECKSUM_HEX + MIDDLE.len() + body.len() + 1);
    bytes.extend_from_slice(PREFIX);
    bytes.extend_from_slice(checksum.as_bytes());
    bytes.extend_from_slice(MIDDLE);
    bytes.extend_from_slice(&body);
    bytes.push(b'}');
    Ok(EncodedSnapshot { tick: snapshot.tick(), checksum, bytes })
}

/// Snapshot and encode in one go.
pub fn snapshot_bytes(world: &World) -> Result<EncodedSnapshot, PersistenceError> {
    encode(&snapshot(world)?)
}

/// Verifies framing and checksum, then the format version, and parses.
pub fn decode(bytes: &[u8]) -> Result<Snapshot, PersistenceError> {
    let mismatch = |why: &str| PersistenceError::ChecksumMismatch(why.to_owned());
    let rest = bytes.strip_prefix(PREFIX).ok_or_else(|| mismatch("bad framing"))?;
    if rest.len() < CHECKSUM_HEX + MIDDLE.len() + 1 {
        return Err(mismatch("truncated"));
    }
    let (stored, rest) = rest.split_at(CHECKSUM_HEX);
    let body = rest.strip_prefix(MIDDLE).and_then(|r| r.strip_suffix(b"}")).ok_or_else(|| mismatch("bad framing"))?;
    let actual = hex::encode(Sha256::digest(body));
    if stored != actual.as_bytes() {
        return Err(mismatch("content does not match the recorded checksum"));
    }

    let value: Value = serde_json::from_slice(body).map_err(|e| PersistenceError::Malformed(e.to_string()))?;
    let version = value
        .get("formatVersion")
        .and_then(Value::as_u64)
        .ok_or_else(|| PersistenceError::Malformed("missing formatVersion".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(PersistenceError::UnsupportedVersion(version));
    }
    serde_json::from_value(value).map_err(|e| PersistenceError::Malformed(e.to_string()))
}

/// Loads `bytes` into `world`, which must have the same component kinds,
/// persistent resources and systems installed as the world that was
/// captured.
pub fn restore_into(world: &mut World, bytes: &[u8]) -> Result<Snapshot, PersistenceError> {
    let snapshot = decode(bytes)?;
    world.apply_state(snapshot.state.clone())?;
    Ok(snapshot)
}

#[cfg(test)]
mod tests;
