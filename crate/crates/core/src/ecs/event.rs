use std::collections::BTreeMap;
use std::sync::Arc;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BoxError, EntityId, World};

/// Nested immediate dispatch beyond this depth is treated as a cascade loop.
pub const MAX_DISPATCH_DEPTH: u32 = 32;

pub const ENTITY_CREATED: &str = "entity-created";
pub const ENTITY_DESTROYED: &str = "entity-destroyed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase")]
pub struct EventRecord {
    pub event_kind: String,
    #[serde(default)]
    pub payload: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_entity: Option<EntityId>,
    /// Stamped by the world on emission.
    #[serde(default)]
    pub tick_emitted: u64,
}

impl EventRecord {
    pub fn new(kind: impl Into<String>) -> Self {
        Self { event_kind: kind.into(), payload: BTreeMap::new(), source_entity: None, tick_emitted: 0 }
    }

    pub fn with_source(mut self, source: EntityId) -> Self {
        self.source_entity = Some(source);
        self
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<Value>) -> Self {
        self.payload.insert(key.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispatchMode {
    /// Subscribers run before `emit_event` returns.
    Immediate,
    /// Subscribers run when the next tick drains the queue.
    Queued,
}

pub type Subscriber = Arc<dyn Fn(&mut World, &EventRecord) -> Result<(), BoxError> + Send + Sync>;
