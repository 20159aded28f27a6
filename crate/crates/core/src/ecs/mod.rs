//! Entity-component-system engine.
//!
//! A [`World`] owns entities (generational ids), one sparse-set store per
//! component kind, a dependency-ordered system schedule and the event
//! queues. [`World::tick`] drains queued events, runs every system in
//! schedule order and advances the tick counter. All of it is single
//! threaded and deterministic for a given seed.

mod entity;
mod event;
pub mod log;
mod resources;
pub(crate) use resources::{PersistHooks, Resources};
mod schedule;
mod storage;
mod world;

pub use entity::{AllocatorState, EntityId, ParseEntityIdError};
pub use event::{DispatchMode, EventRecord, Subscriber, ENTITY_CREATED, ENTITY_DESTROYED, MAX_DISPATCH_DEPTH};
pub use log::{Level, Logger};
pub use schedule::SystemDescriptor;
pub use storage::{Component, SparseSet};
pub use world::{EntityRecord, SystemRun, TickReport, World, WorldConfig, WorldState};

pub type BoxError = Box<dyn std::error::Error + Send + Sync + 'static>;

#[derive(Debug, thiserror::Error)]
pub enum EcsError {
    #[error("entity capacity exhausted ({cap} slots)")]
    CapacityExhausted { cap: usize },
    #[error("stale entity {0}")]
    StaleEntity(EntityId),
    #[error("unknown component kind `{0}`")]
    UnknownComponentKind(String),
    #[error("component kind `{0}` is already registered")]
    DuplicateComponentKind(String),
    #[error("component kind `{0}` is stored with a different type")]
    ComponentTypeMismatch(String),
    #[error("system `{0}` is already registered")]
    DuplicateSystem(String),
    #[error("system `{system}` depends on unregistered system `{dependency}`")]
    UnknownDependency { system: String, dependency: String },
    #[error("system dependency cycle through {0:?}")]
    CycleDetected(Vec<String>),
    #[error("systems cannot be registered while a tick is running")]
    RegistrationDuringTick,
    #[error("tick called re-entrantly from inside a tick")]
    ReentrantTick,
    #[error("unknown event kind `{0}`")]
    UnknownEventKind(String),
    #[error("immediate dispatch depth exceeded {depth} (event cascade loop?)")]
    DispatchDepthExceeded { depth: u32 },
    #[error("subscriber for `{kind}` failed: {source}")]
    SubscriberFailed { kind: String, source: BoxError },
    #[error("system `{system}` failed: {source}")]
    SystemFailed { system: String, source: BoxError },
    #[error("component `{kind}` could not be (de)serialized: {source}")]
    ComponentCodec { kind: String, source: serde_json::Error },
    #[error("unknown persistent resource `{0}`")]
    UnknownResource(String),
    #[error("resource `{name}` could not be (de)serialized: {source}")]
    ResourceCodec { name: String, source: serde_json::Error },
    #[error("malformed world state: {0}")]
    MalformedState(String),
}

impl EcsError {
    /// Recovers an `EcsError` that travelled through a boxed error.
    pub(crate) fn from_boxed(err: BoxError, wrap: impl FnOnce(BoxError) -> EcsError) -> EcsError {
        match err.downcast::<EcsError>() {
            Ok(inner) => *inner,
            Err(other) => wrap(other),
        }
    }
}
