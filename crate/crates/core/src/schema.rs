//! JSON schemas for the documents exchanged with the outside world.

use std::collections::BTreeMap;

use schemars::{schema_for, Schema};

use crate::agent::AgentSpec;
use crate::environment::ActionDescriptor;
use crate::messaging::{MessageEnvelope, OutgoingMessage};
use crate::runtime::RunMetrics;
use crate::scenario::ScenarioConfig;

/// Schemas keyed by document name.
pub fn schemas() -> BTreeMap<&'static str, Schema> {
    BTreeMap::from([
        ("agent-spec", schema_for!(AgentSpec)),
        ("scenario", schema_for!(ScenarioConfig)),
        ("message-envelope", schema_for!(MessageEnvelope)),
        ("outgoing-message", schema_for!(OutgoingMessage)),
        ("action", schema_for!(ActionDescriptor)),
        ("run-metrics", schema_for!(RunMetrics)),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_schema_is_an_object_schema() {
        for (name, schema) in schemas() {
            let value = schema.as_value();
            assert!(value.get("$schema").is_some(), "{name} lacks $schema");
        }
    }
}
