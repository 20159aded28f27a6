//! Every published JSON schema, served under `/v1/schema/<name>`.

use std::collections::BTreeMap;

use hecate_core::agent::AgentView;
use schemars::{schema_for, Schema};

use crate::command::CommandEnvelope;
use crate::error::ErrorBody;
use crate::frames::{ClientFrame, Frame};
use crate::views::{GroupView, SnapshotInfo, WorldView};

/// Bumped on incompatible changes to any document below.
pub const VERSION: u32 = 1;

pub fn schemas() -> BTreeMap<&'static str, Schema> {
    let mut all = hecate_core::schema::schemas();
    all.extend([
        ("error", schema_for!(ErrorBody)),
        ("frame", schema_for!(Frame)),
        ("client-frame", schema_for!(ClientFrame)),
        ("command", schema_for!(CommandEnvelope)),
        ("world", schema_for!(WorldView)),
        ("agent", schema_for!(AgentView)),
        ("group", schema_for!(GroupView)),
        ("snapshot", schema_for!(SnapshotInfo)),
    ]);
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_documents_are_all_published() {
        let names: Vec<_> = schemas().into_keys().collect();
        for required in ["agent-spec", "scenario", "message-envelope", "error", "frame", "client-frame", "run-metrics"]
        {
            assert!(names.contains(&required), "{required} missing from {names:?}");
        }
    }

    #[test]
    fn frame_schema_lists_every_frame_type() {
        let text = serde_json::to_string(&schemas()["frame"]).unwrap();
        for kind in ["subscribed", "event", "message", "percept", "outcome", "tick", "ack", "error"] {
            assert!(text.contains(&format!("\"{kind}\"")), "{kind}");
        }
    }
}
