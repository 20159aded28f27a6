//! Agent communication.
//!
//! Messages are routed at send time to concrete recipients (one agent,
//! the members of a group as of the send, or the subscribers of a topic)
//! and handed to a [`Broker`]. Once per tick the messaging system polls
//! the broker and moves due envelopes into [`MessageComponent`] inboxes,
//! deduplicating by message id.

mod broker;
mod envelope;

use rand::RngCore;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use uuid::Uuid;

pub use broker::{Broker, BrokerConfig, Dispatch, InMemoryBroker, PendingDelivery, PollOutcome};
pub use envelope::{
    DedupWindow, DeliverySemantics, MessageComponent, MessageEnvelope, OutgoingMessage, Target, DEDUP_WINDOW,
};

use crate::ecs::{Component, EcsError, EntityId, Level, PersistHooks, Resources, SystemDescriptor, World};
use crate::organization::GroupComponent;

pub const SYSTEM_NAME: &str = "messaging";
pub(crate) const RESOURCE_NAME: &str = "messaging";

#[derive(Debug, thiserror::Error)]
pub enum MessagingError {
    #[error("no broker is installed")]
    NoBroker,
    #[error("sender {0} is not live")]
    UnknownSender(EntityId),
    #[error("unknown message target {0:?}")]
    UnknownTarget(Target),
    #[error(transparent)]
    Ecs(#[from] EcsError),
}

impl MessagingError {
    pub fn code(&self) -> &'static str {
        match self {
            MessagingError::NoBroker => "no-broker",
            MessagingError::UnknownSender(_) => "unknown-sender",
            MessagingError::UnknownTarget(_) => "unknown-target",
            MessagingError::Ecs(EcsError::StaleEntity(_)) => "stale-entity",
            MessagingError::Ecs(_) => "internal",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase")]
pub struct MessagingStats {
    /// Per-recipient deliveries created by sends.
    pub sent: u64,
    /// Envelopes accepted into an inbox (duplicates excluded).
    pub delivered: u64,
    pub dropped_attempts: u64,
    /// At-most-once deliveries lost to drops.
    pub lost: u64,
    /// Redeliveries rejected by an inbox's dedup window.
    pub duplicates: u64,
}

/// The installed broker plus the consumer-side settings and counters.
pub struct Messaging {
    broker: Box<dyn Broker>,
    /// Acknowledge as soon as an inbox accepts an envelope.
    pub auto_ack: bool,
    pub stats: MessagingStats,
    last_pass: Vec<(EntityId, MessageEnvelope)>,
}

impl Messaging {
    pub fn new(broker: impl Broker + 'static) -> Self {
        Self { broker: Box::new(broker), auto_ack: true, stats: MessagingStats::default(), last_pass: Vec::new() }
    }

    pub fn broker(&self) -> &dyn Broker {
        self.broker.as_ref()
    }

    pub fn broker_mut(&mut self) -> &mut dyn Broker {
        self.broker.as_mut()
    }

    /// Envelopes accepted into inboxes by the most recent delivery pass.
    pub fn last_deliveries(&self) -> &[(EntityId, MessageEnvelope)] {
        &self.last_pass
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct MessagingState {
    auto_ack: bool,
    broker: Value,
    stats: MessagingStats,
}

fn save_messaging(res: &Resources) -> Option<Result<Value, serde_json::Error>> {
    let messaging = res.get::<Messaging>()?;
    Some(messaging.broker.save_state().and_then(|broker| {
        serde_json::to_value(MessagingState { auto_ack: messaging.auto_ack, broker, stats: messaging.stats })
    }))
}

fn load_messaging(res: &mut Resources, value: Value) -> Result<(), serde_json::Error> {
    let state: MessagingState = serde_json::from_value(value)?;
    if res.get::<Messaging>().is_none() {
        res.insert(Messaging::new(InMemoryBroker::default()));
    }
    let messaging = res.get_mut::<Messaging>().expect("inserted above");
    messaging.broker.load_state(state.broker)?;
    messaging.auto_ack = state.auto_ack;
    messaging.stats = state.stats;
    messaging.last_pass.clear();
    Ok(())
}

/// Registers the inbox component, installs `messaging` and the
/// per-tick delivery system.
pub fn install(world: &mut World, messaging: Messaging, after: &[&str]) -> Result<(), EcsError> {
    world.register::<MessageComponent>()?;
    world.insert_resource(messaging);
    world.register_persistent_hooks(RESOURCE_NAME, PersistHooks { save: save_messaging, load: load_messaging });
    world.on_destroy(|world, id| {
        if let Some(m) = world.resource_mut::<Messaging>() {
            m.broker.forget(id);
        }
    });
    world.register_system(
        SystemDescriptor::new(SYSTEM_NAME).writes([MessageComponent::KIND]).after(after.iter().copied()),
        |world| {
            deliver_pending(world)?;
            Ok(())
        },
    )
}

fn next_message_id(world: &mut World) -> Uuid {
    let mut bytes = [0u8; 16];
    world.rng().fill_bytes(&mut bytes);
    uuid::Builder::from_random_bytes(bytes).into_uuid()
}

/// Recipients of `target` right now. Unknown topics have no recipients.
pub fn resolve_target(world: &World, target: &Target) -> Result<Vec<EntityId>, MessagingError> {
    match target {
        Target::Agent(id) => {
            if world.is_live(*id) {
                Ok(vec![*id])
            } else {
                Err(MessagingError::UnknownTarget(target.clone()))
            }
        }
        Target::Group(group) => match world.is_live(*group).then(|| world.get::<GroupComponent>(*group)) {
            Some(Ok(Some(g))) => Ok(g.members.iter().copied().collect()),
            _ => Err(MessagingError::UnknownTarget(target.clone())),
        },
        Target::Topic(topic) => {
            let messaging = world.resource::<Messaging>().ok_or(MessagingError::NoBroker)?;
            Ok(messaging.broker.subscribers(topic))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase")]
pub struct SendReceipt {
    pub message_id: Uuid,
    pub recipients: Vec<EntityId>,
}

/// Routes a message from `sender`. Recipients are fixed now; delivery
/// happens in the next messaging pass.
pub fn send(world: &mut World, sender: EntityId, message: OutgoingMessage) -> Result<SendReceipt, MessagingError> {
    if !world.is_live(sender) {
        return Err(MessagingError::UnknownSender(sender));
    }
    if world.resource::<Messaging>().is_none() {
        return Err(MessagingError::NoBroker);
    }
    let recipients = resolve_target(world, &message.target)?;
    let envelope = MessageEnvelope {
        message_id: next_message_id(world),
        sender,
        target: message.target,
        performative: message.performative,
        payload: message.payload,
        semantics: message.semantics,
        attempt: 1,
    };
    publish(world, &envelope, &recipients)?;
    Ok(SendReceipt { message_id: envelope.message_id, recipients })
}

/// Publishes a fully formed envelope, e.g. one received over the wire.
pub fn send_envelope(world: &mut World, envelope: MessageEnvelope) -> Result<SendReceipt, MessagingError> {
    if !world.is_live(envelope.sender) {
        return Err(MessagingError::UnknownSender(envelope.sender));
    }
    let recipients = resolve_target(world, &envelope.target)?;
    publish(world, &envelope, &recipients)?;
    Ok(SendReceipt { message_id: envelope.message_id, recipients })
}

fn publish(world: &mut World, envelope: &MessageEnvelope, recipients: &[EntityId]) -> Result<(), MessagingError> {
    let tick = world.current_tick();
    let messaging = world.resource_mut::<Messaging>().ok_or(MessagingError::NoBroker)?;
    messaging.broker.publish(envelope, recipients, tick);
    messaging.stats.sent += recipients.len() as u64;
    let (id, count) = (envelope.message_id, recipients.len());
    world.log(Level::Debug, "message-sent", &[("message", &id), ("recipients", &count)]);
    Ok(())
}

pub fn subscribe_topic(world: &mut World, agent: EntityId, topic: &str) -> Result<(), MessagingError> {
    if !world.is_live(agent) {
        return Err(MessagingError::Ecs(EcsError::StaleEntity(agent)));
    }
    let messaging = world.resource_mut::<Messaging>().ok_or(MessagingError::NoBroker)?;
    messaging.broker.subscribe(topic, agent);
    Ok(())
}

pub fn unsubscribe_topic(world: &mut World, agent: EntityId, topic: &str) -> Result<(), MessagingError> {
    let messaging = world.resource_mut::<Messaging>().ok_or(MessagingError::NoBroker)?;
    messaging.broker.unsubscribe(topic, agent);
    Ok(())
}

/// Acknowledges `message_id` for `agent`: the pending delivery is removed
/// and the id recorded as seen. Acking again changes nothing.
pub fn ack(world: &mut World, agent: EntityId, message_id: Uuid) -> Result<(), MessagingError> {
    if !world.is_live(agent) {
        return Err(MessagingError::Ecs(EcsError::StaleEntity(agent)));
    }
    let messaging = world.resource_mut::<Messaging>().ok_or(MessagingError::NoBroker)?;
    messaging.broker.ack(message_id, agent);
    match world.get_mut::<MessageComponent>(agent)? {
        Some(inbox) => {
            inbox.seen.insert(message_id);
        }
        None => {
            let mut inbox = MessageComponent::default();
            inbox.seen.insert(message_id);
            world.insert(agent, inbox)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DeliveryReport {
    pub attempted: usize,
    pub delivered: usize,
    pub duplicates: usize,
    pub dropped: usize,
    pub lost: usize,
}

/// One delivery pass: polls the broker and fills inboxes. Recipients that
/// no longer exist are skipped. Without a broker this does nothing.
pub fn deliver_pending(world: &mut World) -> Result<DeliveryReport, MessagingError> {
    let Some(mut messaging) = world.remove_resource::<Messaging>() else {
        return Ok(DeliveryReport::default());
    };
    let result = deliver_with(world, &mut messaging);
    world.insert_resource(messaging);
    result
}

fn deliver_with(world: &mut World, messaging: &mut Messaging) -> Result<DeliveryReport, MessagingError> {
    let tick = world.current_tick();
    let poll = messaging.broker.poll(tick, world.rng());
    let mut report = DeliveryReport {
        attempted: poll.dispatches.len() + poll.dropped,
        dropped: poll.dropped,
        lost: poll.lost,
        ..DeliveryReport::default()
    };
    messaging.last_pass.clear();
    for inbox in world.store_mut::<MessageComponent>()?.dense_mut() {
        inbox.fresh = 0;
    }
    for Dispatch { recipient, envelope } in poll.dispatches {
        if !world.is_live(recipient) {
            continue;
        }
        let id = envelope.message_id;
        if world.get::<MessageComponent>(recipient)?.is_none() {
            world.insert(recipient, MessageComponent::default())?;
        }
        let inbox = world.get_mut::<MessageComponent>(recipient)?.expect("inserted above");
        if inbox.accept(envelope.clone()) {
            report.delivered += 1;
            messaging.last_pass.push((recipient, envelope));
        } else {
            report.duplicates += 1;
        }
        if messaging.auto_ack {
            messaging.broker.ack(id, recipient);
        }
    }
    messaging.stats.delivered += report.delivered as u64;
    messaging.stats.duplicates += report.duplicates as u64;
    messaging.stats.dropped_attempts += report.dropped as u64;
    messaging.stats.lost += report.lost as u64;
    Ok(report)
}

pub fn stats(world: &World) -> Option<MessagingStats> {
    world.resource::<Messaging>().map(|m| m.stats)
}
