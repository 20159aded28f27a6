//! Deterministic multi-agent runtime on an entity-component-system core.
//!
//! The [`ecs`] module is the engine. On top of it, [`agent`],
//! [`organization`], [`environment`] and [`messaging`] model agents as
//! entities with components and drive them with systems; [`persistence`]
//! snapshots whole worlds and [`runtime::Simulation`] wires everything
//! together with the standard schedule.

pub mod agent;
pub mod ecs;
pub mod environment;
pub mod messaging;
pub mod organization;
pub mod persistence;
pub mod predicate;
pub mod runtime;
pub mod scenario;
pub mod schema;

pub use ecs::{EntityId, World};
pub use runtime::Simulation;

/// The guide's chapters, compiled so their examples run as tests.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/ecs.md")]
    mod ecs {}
    #[doc = include_str!("../../../book/src/events.md")]
    mod events {}
    #[doc = include_str!("../../../book/src/agents.md")]
    mod agents {}
    #[doc = include_str!("../../../book/src/organization.md")]
    mod organization {}
    #[doc = include_str!("../../../book/src/environment.md")]
    mod environment {}
    #[doc = include_str!("../../../book/src/messaging.md")]
    mod messaging {}
    #[doc = include_str!("../../../book/src/persistence.md")]
    mod persistence {}
}
