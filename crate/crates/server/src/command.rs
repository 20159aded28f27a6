//! Staged commands and the idempotence ledger.
//!
//! Every mutation reaches the world as a [`CommandEnvelope`] on the
//! executor's queue and is applied between ticks. A command carrying a
//! client-chosen id is recorded with its reply; a second command with the
//! same id gets the recorded reply back and is not executed again.

use std::collections::{HashMap, VecDeque};
use std::time::SystemTime;

use hecate_core::agent::{AgentSpec, AgentState};
use hecate_core::environment::ActionDescriptor;
use hecate_core::messaging::OutgoingMessage;
use hecate_core::organization::RoleRef;
use hecate_core::scenario::{FactVisibility, GroupConfig};
use hecate_core::EntityId;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::ApiError;

/// Header carrying the client's command id.
pub const COMMAND_ID_HEADER: &str = "x-command-id";
/// Set on responses replayed from the ledger.
pub const REPLAYED_HEADER: &str = "x-command-replayed";

/// Recorded replies kept for deduplication; the oldest are forgotten first.
pub const LEDGER_CAPACITY: usize = 65_536;

#[derive(Debug, Clone, Serialize, JsonSchema)]
#[serde(rename_all = "camelCase")]
pub struct CommandEnvelope {
    /// Client-supplied; commands without one are never deduplicated.
    pub command_id: Option<String>,
    #[serde(flatten)]
    pub command: Command,
    /// Milliseconds since the Unix epoch.
    pub received_at: u64,
}

impl CommandEnvelope {
    pub fn new(command_id: Option<String>, command: Command) -> Self {
        let received_at = SystemTime::now().duration_since(SystemTime::UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64);
        Self { command_id, command, received_at }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", content = "body", rename_all = "kebab-case")]
pub enum Command {
    Spawn(Box<AgentSpec>),
    SetState {
        agent: EntityId,
        target: AgentState,
    },
    CreateGroup(GroupConfig),
    JoinGroup {
        agent: EntityId,
        group: String,
    },
    LeaveGroup {
        agent: EntityId,
        group: String,
    },
    Invite {
        agent: EntityId,
        group: String,
    },
    AssignRole {
        agent: EntityId,
        role: String,
        group: String,
        #[serde(default)]
        capabilities: Vec<String>,
    },
    ActivateRole {
        agent: EntityId,
        role: RoleRef,
    },
    SendMessage {
        sender: EntityId,
        message: OutgoingMessage,
    },
    EnvAction(ActionDescriptor),
    SetFact {
        key: String,
        value: Value,
        #[serde(default)]
        visibility: FactVisibility,
    },
    Snapshot(SnapshotRequest),
    TickControl(TickControl),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Spawn(_) => "spawn",
            Command::SetState { .. } => "set-state",
            Command::CreateGroup(_) => "create-group",
            Command::JoinGroup { .. } => "join-group",
            Command::LeaveGroup { .. } => "leave-group",
            Command::Invite { .. } => "invite",
            Command::AssignRole { .. } => "assign-role",
            Command::ActivateRole { .. } => "activate-role",
            Command::SendMessage { .. } => "send-message",
            Command::EnvAction(_) => "env-action",
            Command::SetFact { .. } => "set-fact",
            Command::Snapshot(_) => "snapshot",
            Command::TickControl(_) => "tick-control",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum SnapshotRequest {
    Take,
    /// `latest` or a locator returned by `take`.
    Restore {
        locator: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum TickControl {
    /// Manual mode only.
    Step { steps: u64 },
    /// Switches to ticking `rate` times per second.
    Run { rate: f64 },
    /// Back to manual.
    Pause,
}

/// What the executor answers: an HTTP-style status and a JSON body.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub status: u16,
    pub body: Value,
    /// True when served from the ledger.
    pub replayed: bool,
}

impl Reply {
    pub fn ok(body: impl Serialize) -> Self {
        Self::with_status(200, body)
    }

    pub fn with_status(status: u16, body: impl Serialize) -> Self {
        Self { status, body: serde_json::to_value(body).expect("reply bodies serialize"), replayed: false }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

impl From<ApiError> for Reply {
    fn from(err: ApiError) -> Self {
        Self::with_status(err.status, err.body)
    }
}

/// Replies by command id, bounded to `capacity` entries.
#[derive(Debug)]
pub struct Ledger {
    replies: HashMap<String, Reply>,
    order: VecDeque<String>,
    capacity: usize,
}

impl Default for Ledger {
    fn default() -> Self {
        Self::with_capacity(LEDGER_CAPACITY)
    }
}

impl Ledger {
    pub fn with_capacity(capacity: usize) -> Self {
        Self { replies: HashMap::new(), order: VecDeque::new(), capacity: capacity.max(1) }
    }

    /// The recorded reply for `id`, marked as replayed.
    pub fn replay(&self, id: &str) -> Option<Reply> {
        self.replies.get(id).map(|r| Reply { replayed: true, ..r.clone() })
    }

    pub fn record(&mut self, id: String, reply: Reply) {
        if self.replies.insert(id.clone(), reply).is_none() {
            self.order.push_back(id);
            if self.order.len() > self.capacity {
                let oldest = self.order.pop_front().expect("non-empty");
                self.replies.remove(&oldest);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;

    #[test]
    fn envelope_wire_form() {
        let env = CommandEnvelope {
            command_id: Some("c1".into()),
            command: Command::TickControl(TickControl::Step { steps: 3 }),
            received_at: 5,
        };
        assert_eq!(
            serde_json::to_value(&env).unwrap(),
            json!({"commandId": "c1", "kind": "tick-control", "body": {"op": "step", "steps": 3}, "receivedAt": 5})
        );
    }

    #[test]
    fn command_names_match_wire_kinds() {
        let commands = [
            Command::Snapshot(SnapshotRequest::Take),
            Command::SetState { agent: EntityId::new(1, 0), target: AgentState::Suspended },
            Command::JoinGroup { agent: EntityId::new(1, 0), group: "g".into() },
        ];
        for c in commands {
            assert_eq!(serde_json::to_value(&c).unwrap()["kind"], c.name());
        }
    }

    #[test]
    fn replays_are_marked_and_identical() {
        let mut ledger = Ledger::default();
        ledger.record("a".into(), Reply::with_status(201, json!({"id": "1v0"})));
        let again = ledger.replay("a").unwrap();
        assert!(again.replayed);
        assert_eq!((again.status, again.body), (201, json!({"id": "1v0"})));
        assert!(ledger.replay("b").is_none());
    }

    #[test]
    fn ledger_forgets_oldest_first() {
        let mut ledger = Ledger::with_capacity(2);
        for id in ["a", "b", "c"] {
            ledger.record(id.into(), Reply::ok(id));
        }
        assert_eq!(ledger.len(), 2);
        assert!(ledger.replay("a").is_none());
        assert!(ledger.replay("c").is_some());
        // Re-recording an id does not grow the ledger.
        ledger.record("c".into(), Reply::ok("again"));
        assert_eq!(ledger.len(), 2);
        assert!(ledger.replay("b").is_some());
    }
}
