use std::collections::{BTreeMap, HashSet, VecDeque};

use schemars::JsonSchema;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use uuid::Uuid;

use crate::ecs::{Component, EntityId};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum DeliverySemantics {
    /// One attempt; a dropped message is gone.
    AtMostOnce,
    /// Retried until acknowledged; receivers deduplicate.
    #[default]
    AtLeastOnce,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Agent(EntityId),
    Group(EntityId),
    Topic(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase")]
pub struct MessageEnvelope {
    pub message_id: Uuid,
    pub sender: EntityId,
    pub target: Target,
    pub performative: String,
    #[serde(default)]
    pub payload: BTreeMap<String, Value>,
    #[serde(default)]
    pub semantics: DeliverySemantics,
    pub attempt: u32,
}

/// A message before routing: no id, sender or attempt yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase")]
pub struct OutgoingMessage {
    pub target: Target,
    pub performative: String,
    #[serde(default)]
    pub payload: BTreeMap<String, Value>,
    #[serde(default)]
    pub semantics: DeliverySemantics,
}

impl OutgoingMessage {
    pub fn new(target: Target, performative: impl Into<String>) -> Self {
        Self {
            target,
            performative: performative.into(),
            payload: BTreeMap::new(),
            semantics: DeliverySemantics::default(),
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<Value>) -> Self {
        self.payload.insert(key.into(), value.into());
        self
    }

    pub fn semantics(mut self, semantics: DeliverySemantics) -> Self {
        self.semantics = semantics;
        self
    }
}

pub const DEDUP_WINDOW: usize = 4096;

/// The most recent message ids an inbox has accepted, oldest evicted first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DedupWindow {
    order: VecDeque<Uuid>,
    members: HashSet<Uuid>,
}

impl DedupWindow {
    pub fn contains(&self, id: &Uuid) -> bool {
        self.members.contains(id)
    }

    /// Returns false if `id` was already present.
    pub fn insert(&mut self, id: Uuid) -> bool {
        if !self.members.insert(id) {
            return false;
        }
        self.order.push_back(id);
        if self.order.len() > DEDUP_WINDOW {
            if let Some(evicted) = self.order.pop_front() {
                self.members.remove(&evicted);
            }
        }
        true
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

impl Serialize for DedupWindow {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.order.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DedupWindow {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let ids = Vec::<Uuid>::deserialize(deserializer)?;
        let mut window = DedupWindow::default();
        for id in ids {
            window.insert(id);
        }
        Ok(window)
    }
}

/// Per-agent inbox. `fresh` counts the messages at the back of `inbox`
/// that arrived in the most recent delivery pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MessageComponent {
    pub inbox: Vec<MessageEnvelope>,
    pub seen: DedupWindow,
    #[serde(default)]
    pub fresh: usize,
}

impl Component for MessageComponent {
    const KIND: &'static str = "message";
}

impl MessageComponent {
    /// Accepts an envelope unless its id was seen before.
    pub fn accept(&mut self, envelope: MessageEnvelope) -> bool {
        if !self.seen.insert(envelope.message_id) {
            return false;
        }
        self.inbox.push(envelope);
        self.fresh += 1;
        true
    }

    pub fn fresh_messages(&self) -> &[MessageEnvelope] {
        let start = self.inbox.len().saturating_sub(self.fresh);
        &self.inbox[start..]
    }

    /// Empties the inbox; ids stay in the dedup window.
    pub fn drain(&mut self) -> Vec<MessageEnvelope> {
        self.fresh = 0;
        std::mem::take(&mut self.inbox)
    }
}
