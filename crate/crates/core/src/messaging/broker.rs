use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, RngCore};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use uuid::Uuid;

use super::envelope::{DeliverySemantics, MessageEnvelope};
use crate::ecs::EntityId;

/// An envelope handed to a recipient during a poll.
#[derive(Debug, Clone, PartialEq)]
pub struct Dispatch {
    pub recipient: EntityId,
    pub envelope: MessageEnvelope,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PollOutcome {
    pub dispatches: Vec<Dispatch>,
    /// Attempts lost to fault injection.
    pub dropped: usize,
    /// At-most-once deliveries dropped for good.
    pub lost: usize,
}

/// What the messaging layer needs from a message broker.
///
/// Routing to concrete recipients happens before `publish`; the broker
/// keeps per-recipient pending deliveries, topic subscriptions and
/// acknowledgement state. An at-least-once delivery stays pending, and
/// is handed out again every redelivery interval, until it is acked.
pub trait Broker: Send {
    fn publish(&mut self, envelope: &MessageEnvelope, recipients: &[EntityId], tick: u64);
    fn subscribe(&mut self, topic: &str, entity: EntityId);
    fn unsubscribe(&mut self, topic: &str, entity: EntityId);
    /// Current subscribers of `topic`, ascending.
    fn subscribers(&self, topic: &str) -> Vec<EntityId>;
    /// Topics `entity` is subscribed to.
    fn topics_of(&self, entity: EntityId) -> Vec<String>;
    /// Returns whether a pending delivery was removed.
    fn ack(&mut self, message_id: Uuid, entity: EntityId) -> bool;
    /// Envelopes still pending for `entity`, in publish order.
    fn pending(&self, entity: EntityId) -> Vec<MessageEnvelope>;
    /// Deliveries due at `tick`. Fault injection draws from `rng`.
    fn poll(&mut self, tick: u64, rng: &mut dyn RngCore) -> PollOutcome;
    /// Drops all subscriptions and pending deliveries of `entity`.
    fn forget(&mut self, entity: EntityId);
    fn save_state(&self) -> Result<Value, serde_json::Error>;
    fn load_state(&mut self, state: Value) -> Result<(), serde_json::Error>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase", default)]
pub struct BrokerConfig {
    /// Probability that a delivery attempt is lost, in [0, 1).
    pub drop_probability: f64,
    /// Ticks between redelivery attempts.
    pub redelivery_interval: u64,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        Self { drop_probability: 0.0, redelivery_interval: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PendingDelivery {
    pub envelope: MessageEnvelope,
    pub recipient: EntityId,
    pub sent_tick: u64,
    pub next_attempt: u64,
    /// Set once an attempt has reached the recipient.
    pub delivered: bool,
}

/// Reference broker keeping everything in process memory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InMemoryBroker {
    pub config: BrokerConfig,
    queue: Vec<PendingDelivery>,
    subscriptions: BTreeMap<String, BTreeSet<EntityId>>,
}

impl InMemoryBroker {
    pub fn new(config: BrokerConfig) -> Self {
        assert!((0.0..1.0).contains(&config.drop_probability), "drop probability must lie in [0, 1)");
        Self {
            config: BrokerConfig { redelivery_interval: config.redelivery_interval.max(1), ..config },
            ..Self::default()
        }
    }

    pub fn queue(&self) -> &[PendingDelivery] {
        &self.queue
    }

    /// Fault injection with probability 1, for limit-case tests. Only
    /// at-most-once traffic can be tested this way; at-least-once traffic
    /// would retry forever.
    pub fn drop_everything(&mut self) {
        self.config.drop_probability = 1.0;
    }
}

impl Broker for InMemoryBroker {
    fn publish(&mut self, envelope: &MessageEnvelope, recipients: &[EntityId], tick: u64) {
        for &recipient in recipients {
            self.queue.push(PendingDelivery {
                envelope: envelope.clone(),
                recipient,
                sent_tick: tick,
                next_attempt: tick,
                delivered: false,
            });
        }
    }

    fn subscribe(&mut self, topic: &str, entity: EntityId) {
        self.subscriptions.entry(topic.to_owned()).or_default().insert(entity);
    }

    fn unsubscribe(&mut self, topic: &str, entity: EntityId) {
        if let Some(set) = self.subscriptions.get_mut(topic) {
            set.remove(&entity);
            if set.is_empty() {
                self.subscriptions.remove(topic);
            }
        }
    }

    fn subscribers(&self, topic: &str) -> Vec<EntityId> {
        self.subscriptions.get(topic).map(|s| s.iter().copied().collect()).unwrap_or_default()
    }

    fn topics_of(&self, entity: EntityId) -> Vec<String> {
        self.subscriptions.iter().filter(|(_, s)| s.contains(&entity)).map(|(t, _)| t.clone()).collect()
    }

    fn ack(&mut self, message_id: Uuid, entity: EntityId) -> bool {
        let before = self.queue.len();
        self.queue.retain(|p| !(p.envelope.message_id == message_id && p.recipient == entity));
        self.queue.len() != before
    }

    fn pending(&self, entity: EntityId) -> Vec<MessageEnvelope> {
        self.queue.iter().filter(|p| p.recipient == entity).map(|p| p.envelope.clone()).collect()
    }

    fn poll(&mut self, tick: u64, rng: &mut dyn RngCore) -> PollOutcome {
        let mut out = PollOutcome::default();
        let interval = self.config.redelivery_interval.max(1);
        let drop_probability = self.config.drop_probability;
        let mut kept = Vec::with_capacity(self.queue.len());
        for mut pending in std::mem::take(&mut self.queue) {
            if pending.next_attempt > tick {
                kept.push(pending);
                continue;
            }
            let dropped = !pending.delivered && drop_probability > 0.0 && rng.random::<f64>() < drop_probability;
            if dropped {
                out.dropped += 1;
            } else {
                pending.delivered = true;
                out.dispatches.push(Dispatch { recipient: pending.recipient, envelope: pending.envelope.clone() });
            }
            match pending.envelope.semantics {
                DeliverySemantics::AtMostOnce => {
                    if dropped {
                        out.lost += 1;
                    }
                }
                DeliverySemantics::AtLeastOnce => {
                    pending.envelope.attempt += 1;
                    pending.next_attempt = tick + interval;
                    kept.push(pending);
                }
            }
        }
        self.queue = kept;
        out
    }

    fn forget(&mut self, entity: EntityId) {
        self.queue.retain(|p| p.recipient != entity);
        for set in self.subscriptions.values_mut() {
            set.remove(&entity);
        }
        self.subscriptions.retain(|_, s| !s.is_empty());
    }

    fn save_state(&self) -> Result<Value, serde_json::Error> {
        serde_json::to_value(self)
    }

    fn load_state(&mut self, state: Value) -> Result<(), serde_json::Error> {
        *self = serde_json::from_value(state)?;
        Ok(())
    }
}
