//! Read models returned by the REST surface.

use hecate_core::agent::{self, AgentComponent, AgentView};
use hecate_core::organization::{GroupComponent, Policy, Structure};
use hecate_core::{EntityId, World};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase")]
pub struct WorldView {
    /// Ticks completed so far.
    pub tick: u64,
    pub entity_count: usize,
    pub agent_count: usize,
    pub seed: u64,
    pub groups: Vec<GroupSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct GroupSummary {
    pub id: EntityId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase")]
pub struct GroupView {
    pub id: EntityId,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<EntityId>,
    pub members: Vec<EntityId>,
    pub invited: Vec<EntityId>,
    pub policies: Vec<Policy>,
    pub role_conflicts: Vec<(String, String)>,
}

impl GroupView {
    pub fn new(id: EntityId, group: &GroupComponent) -> Self {
        Self {
            id,
            name: group.name.clone(),
            parent: match group.structure {
                Structure::Flat => None,
                Structure::Hierarchical { parent } => Some(parent),
            },
            members: group.members.iter().copied().collect(),
            invited: group.invited.iter().copied().collect(),
            policies: group.policies.values().cloned().collect(),
            role_conflicts: group.role_conflicts.iter().cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase")]
pub struct SnapshotInfo {
    pub locator: String,
    pub tick: u64,
    pub checksum: String,
}

pub fn world_view(world: &World) -> WorldView {
    WorldView {
        tick: world.current_tick(),
        entity_count: world.entity_count(),
        agent_count: agent_ids(world).len(),
        seed: world.seed(),
        groups: group_views(world).into_iter().map(|g| GroupSummary { id: g.id, name: g.name }).collect(),
    }
}

/// Agent ids, ascending.
pub fn agent_ids(world: &World) -> Vec<EntityId> {
    let Ok(store) = world.store::<AgentComponent>() else {
        return Vec::new();
    };
    let mut ids: Vec<_> = store.iter().filter_map(|(i, _)| world.entity_at(i)).collect();
    ids.sort();
    ids
}

pub fn agent_views(world: &World) -> Vec<AgentView> {
    agent_ids(world).into_iter().filter_map(|id| agent::agent_view(world, id).ok()).collect()
}

/// Groups, ascending by id.
pub fn group_views(world: &World) -> Vec<GroupView> {
    let Ok(store) = world.store::<GroupComponent>() else {
        return Vec::new();
    };
    let mut views: Vec<_> =
        store.iter().filter_map(|(i, g)| world.entity_at(i).map(|id| GroupView::new(id, g))).collect();
    views.sort_by_key(|g| g.id);
    views
}
