//! Frames on the event channel.
//!
//! The executor publishes one [`Batch`] per tick. Each connection keeps a
//! [`Subscriptions`] value and forwards the frames it selects, so frame
//! order on a connection follows tick order, and within a tick the
//! batch's own order: by frame kind (the event kind for events), then by
//! entity index, with the closing `tick` frame last.
//!
//! The `tick` field on a frame numbers the tick that produced it, counting
//! from 0, like `tickEmitted` on events and `tick` on outcomes. After that
//! tick `GET /v1/world` reports one more.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use hecate_core::ecs::EventRecord;
use hecate_core::environment::{ActionDescriptor, ActionOutcome, Percept};
use hecate_core::messaging::{MessageEnvelope, OutgoingMessage};
use hecate_core::EntityId;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::ErrorBody;

/// What a subscription covers: one agent, or world-wide events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    World,
    Agent(EntityId),
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::World => f.write_str("world"),
            Scope::Agent(id) => id.fmt(f),
        }
    }
}

impl FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "world" {
            return Ok(Scope::World);
        }
        s.parse().map(Scope::Agent).map_err(|e| format!("scope must be `world` or an agent id: {e}"))
    }
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Frame {
    Subscribed {
        scope: String,
    },
    Unsubscribed {
        scope: String,
    },
    /// A dispatched world event.
    Event {
        tick: u64,
        event: EventRecord,
    },
    /// An envelope accepted into `agent`'s inbox.
    Message {
        tick: u64,
        agent: EntityId,
        envelope: MessageEnvelope,
    },
    /// What `agent` perceived this tick.
    Percept {
        tick: u64,
        agent: EntityId,
        percepts: Vec<Percept>,
    },
    Outcome {
        tick: u64,
        outcome: ActionOutcome,
    },
    /// Closes the frames of one tick.
    Tick {
        tick: u64,
    },
    /// Answer to an inbound command frame.
    Ack {
        #[serde(rename = "commandId", default, skip_serializing_if = "Option::is_none")]
        command_id: Option<String>,
        command: String,
        status: u16,
        result: Value,
        #[serde(default)]
        replayed: bool,
    },
    Error(ErrorBody),
}

impl Frame {
    /// Ordering key within a tick.
    fn sort_key(&self) -> (&str, u32) {
        match self {
            Frame::Event { event, .. } => (&event.event_kind, event.source_entity.map_or(0, |e| e.index)),
            Frame::Message { agent, .. } => ("message", agent.index),
            Frame::Percept { agent, .. } => ("percept", agent.index),
            Frame::Outcome { outcome, .. } => ("outcome", outcome.issuer.index),
            _ => ("", 0),
        }
    }
}

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ClientFrame {
    /// `scope` is `world` or an agent id.
    Subscribe {
        scope: String,
    },
    Unsubscribe {
        scope: String,
    },
    SendMessage {
        #[serde(rename = "commandId", default)]
        command_id: Option<String>,
        sender: EntityId,
        message: OutgoingMessage,
    },
    EnvAction {
        #[serde(rename = "commandId", default)]
        command_id: Option<String>,
        action: ActionDescriptor,
    },
}

/// Frames produced by one tick (or by a command between ticks, which has
/// no closing `tick` frame).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub frames: Vec<Frame>,
}

impl Batch {
    /// Sorts `frames` into channel order and appends `closing`.
    pub fn new(mut frames: Vec<Frame>, closing: Option<Frame>) -> Self {
        frames.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        frames.extend(closing);
        Self { frames }
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// One connection's subscriptions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Subscriptions {
    pub world: bool,
    pub agents: BTreeSet<EntityId>,
    /// Issuers whose next outcomes were requested over this connection.
    pub awaiting: BTreeMap<EntityId, usize>,
}

impl Subscriptions {
    pub fn add(&mut self, scope: Scope) -> bool {
        match scope {
            Scope::World => !std::mem::replace(&mut self.world, true),
            Scope::Agent(id) => self.agents.insert(id),
        }
    }

    pub fn remove(&mut self, scope: Scope) -> bool {
        match scope {
            Scope::World => std::mem::replace(&mut self.world, false),
            Scope::Agent(id) => self.agents.remove(&id),
        }
    }

    pub fn is_empty(&self) -> bool {
        !self.world && self.agents.is_empty() && self.awaiting.is_empty()
    }

    pub fn await_outcome(&mut self, issuer: EntityId) {
        *self.awaiting.entry(issuer).or_default() += 1;
    }

    /// Whether this connection gets `frame`. Consumes an awaited outcome.
    pub fn select(&mut self, frame: &Frame) -> bool {
        match frame {
            Frame::Event { event, .. } => self.world || event.source_entity.is_some_and(|e| self.agents.contains(&e)),
            Frame::Message { agent, .. } | Frame::Percept { agent, .. } => self.agents.contains(agent),
            Frame::Outcome { outcome, .. } => {
                let issuer = outcome.issuer;
                let awaited = match self.awaiting.get_mut(&issuer) {
                    Some(n) => {
                        *n -= 1;
                        if *n == 0 {
                            self.awaiting.remove(&issuer);
                        }
                        true
                    }
                    None => false,
                };
                awaited || self.world || self.agents.contains(&issuer)
            }
            Frame::Tick { .. } => !self.is_empty(),
            _ => false,
        }
    }

    /// The frames of `batch` this connection gets. The closing `tick` frame
    /// is judged by the subscriptions held when the batch arrived, so a
    /// connection that consumes its last awaited outcome still sees it.
    pub fn select_batch<'a>(&mut self, batch: &'a Batch) -> Vec<&'a Frame> {
        let interested = !self.is_empty();
        batch
            .frames
            .iter()
            .filter(|frame| match frame {
                Frame::Tick { .. } => interested,
                other => self.select(other),
            })
            .collect()
    }
}
