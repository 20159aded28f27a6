//! Groups and roles.
//!
//! A group is an entity carrying a [`GroupComponent`]; an agent's roles
//! live in its [`RoleComponent`]. Joining a group is checked against the
//! group's policies, and role assignment against the role conflicts the
//! group declares. An agent may hold many roles but only one is active,
//! and permission checks consult the active role alone.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::agent::AgentComponent;
use crate::ecs::{Component, DispatchMode, EcsError, EntityId, EventRecord, World};

pub const GROUP_EVENT: &str = "group-changed";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    MaxMembers(usize),
    RoleRequired(String),
    Open,
    InviteOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Policy {
    pub name: String,
    pub kind: PolicyKind,
}

impl Policy {
    pub fn new(name: impl Into<String>, kind: PolicyKind) -> Self {
        Self { name: name.into(), kind }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    #[default]
    Flat,
    Hierarchical {
        parent: EntityId,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GroupComponent {
    pub name: String,
    pub members: BTreeSet<EntityId>,
    pub policies: BTreeMap<String, Policy>,
    pub structure: Structure,
    /// Role pairs no member may hold together within this group.
    #[serde(default)]
    pub role_conflicts: BTreeSet<(String, String)>,
    #[serde(default)]
    pub invited: BTreeSet<EntityId>,
}

impl Component for GroupComponent {
    const KIND: &'static str = "group";
}

impl GroupComponent {
    pub fn max_members(&self) -> Option<usize> {
        self.policies
            .values()
            .filter_map(|p| match p.kind {
                PolicyKind::MaxMembers(n) => Some(n),
                _ => None,
            })
            .min()
    }

    fn conflicts(&self, a: &str, b: &str) -> bool {
        self.role_conflicts.contains(&(a.to_owned(), b.to_owned()))
            || self.role_conflicts.contains(&(b.to_owned(), a.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
pub struct RoleRef {
    pub role: String,
    pub group: EntityId,
}

impl fmt::Display for RoleRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.role, self.group)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RoleComponent {
    pub roles: BTreeSet<RoleRef>,
    pub active_role: Option<RoleRef>,
    pub permissions: BTreeMap<String, BTreeSet<String>>,
}

impl Component for RoleComponent {
    const KIND: &'static str = "role";
}

impl RoleComponent {
    pub fn holds(&self, role: &str) -> bool {
        self.roles.iter().any(|r| r.role == role)
    }

    fn drop_group(&mut self, group: EntityId) {
        self.roles.retain(|r| r.group != group);
        if self.active_role.as_ref().is_some_and(|r| r.group == group) {
            self.active_role = self.roles.iter().next().cloned();
        }
        let remaining: BTreeSet<&str> = self.roles.iter().map(|r| r.role.as_str()).collect();
        self.permissions.retain(|role, _| remaining.contains(role.as_str()));
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OrganizationError {
    #[error("group parent chain forms a cycle at `{0}`")]
    CycleDetected(String),
    #[error("unknown group `{0}`")]
    UnknownGroup(String),
    #[error("a group named `{0}` already exists")]
    DuplicateGroup(String),
    #[error("{0} is not an agent")]
    NotAnAgent(EntityId),
    #[error("policy `{policy}` rejects the request")]
    PolicyViolation { policy: String },
    #[error("{agent} is not a member of group {group}")]
    NotAMember { agent: EntityId, group: EntityId },
    #[error("role `{requested}` conflicts with held role `{existing}`")]
    RoleConflict { requested: String, existing: String },
    #[error("{agent} does not hold role {role}")]
    RoleNotHeld { agent: EntityId, role: RoleRef },
    #[error("max-members must be at least 1")]
    InvalidPolicy,
    #[error(transparent)]
    Ecs(#[from] EcsError),
}

impl OrganizationError {
    pub fn code(&self) -> &'static str {
        match self {
            OrganizationError::CycleDetected(_) => "cycle-detected",
            OrganizationError::UnknownGroup(_) => "unknown-group",
            OrganizationError::DuplicateGroup(_) => "duplicate-group",
            OrganizationError::NotAnAgent(_) => "not-an-agent",
            OrganizationError::PolicyViolation { .. } => "policy-violation",
            OrganizationError::NotAMember { .. } => "not-a-member",
            OrganizationError::RoleConflict { .. } => "role-conflict",
            OrganizationError::RoleNotHeld { .. } => "role-not-held",
            OrganizationError::InvalidPolicy => "invalid-policy",
            OrganizationError::Ecs(EcsError::StaleEntity(_)) => "stale-entity",
            OrganizationError::Ecs(_) => "internal",
        }
    }
}

/// Registers group/role components and the destroy hooks that keep
/// membership and role references pointing at live entities.
pub fn install(world: &mut World) -> Result<(), EcsError> {
    world.register::<GroupComponent>()?;
    world.register::<RoleComponent>()?;
    world.register_event_kind(GROUP_EVENT);
    world.on_destroy(forget_entity);
    Ok(())
}

fn forget_entity(world: &mut World, id: EntityId) {
    let Ok(groups) = world.store_mut::<GroupComponent>() else {
        return;
    };
    let destroyed_group = groups.get(id.index).is_some();
    for group in groups.dense_mut() {
        group.members.remove(&id);
        group.invited.remove(&id);
        if destroyed_group && group.structure == (Structure::Hierarchical { parent: id }) {
            group.structure = Structure::Flat;
        }
    }
    if destroyed_group {
        if let Ok(roles) = world.store_mut::<RoleComponent>() {
            for rc in roles.dense_mut() {
                rc.drop_group(id);
            }
        }
    }
}

/// Group with this name, if any.
pub fn find_group(world: &World, name: &str) -> Option<EntityId> {
    let store = world.store::<GroupComponent>().ok()?;
    store.iter().find(|(_, g)| g.name == name).and_then(|(index, _)| world.entity_at(index))
}

/// Resolves a group reference given either as an entity id (`3v0`) or a name.
pub fn resolve_group(world: &World, reference: &str) -> Result<EntityId, OrganizationError> {
    if let Ok(id) = reference.parse::<EntityId>() {
        if world.is_live(id) && matches!(world.get::<GroupComponent>(id), Ok(Some(_))) {
            return Ok(id);
        }
    }
    find_group(world, reference).ok_or_else(|| OrganizationError::UnknownGroup(reference.to_owned()))
}

fn group(world: &World, id: EntityId) -> Result<&GroupComponent, OrganizationError> {
    match world.get::<GroupComponent>(id) {
        Ok(Some(g)) => Ok(g),
        Ok(None) | Err(EcsError::StaleEntity(_)) => Err(OrganizationError::UnknownGroup(id.to_string())),
        Err(e) => Err(e.into()),
    }
}

fn group_mut(world: &mut World, id: EntityId) -> Result<&mut GroupComponent, OrganizationError> {
    match world.get_mut::<GroupComponent>(id) {
        Ok(Some(g)) => Ok(g),
        Ok(None) | Err(EcsError::StaleEntity(_)) => Err(OrganizationError::UnknownGroup(id.to_string())),
        Err(e) => Err(e.into()),
    }
}

/// Walks parent links from `start`; errors if `start` is reached again.
fn check_chain(
    world: &World,
    name: &str,
    start: EntityId,
    mut parent: Option<EntityId>,
) -> Result<(), OrganizationError> {
    let mut visited = BTreeSet::new();
    while let Some(p) = parent {
        if p == start || !visited.insert(p) {
            return Err(OrganizationError::CycleDetected(name.to_owned()));
        }
        parent = match group(world, p)?.structure {
            Structure::Flat => None,
            Structure::Hierarchical { parent } => Some(parent),
        };
    }
    Ok(())
}

fn validate_policies(policies: &[Policy]) -> Result<(), OrganizationError> {
    if policies.iter().any(|p| p.kind == PolicyKind::MaxMembers(0)) {
        return Err(OrganizationError::InvalidPolicy);
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroupSpec {
    pub name: String,
    /// Parent group given by id or name.
    pub parent: Option<String>,
    pub policies: Vec<Policy>,
    pub role_conflicts: Vec<(String, String)>,
}

impl GroupSpec {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), ..Self::default() }
    }

    pub fn parent(mut self, parent: impl Into<String>) -> Self {
        self.parent = Some(parent.into());
        self
    }

    pub fn policy(mut self, name: impl Into<String>, kind: PolicyKind) -> Self {
        self.policies.push(Policy::new(name, kind));
        self
    }

    pub fn conflict(mut self, a: impl Into<String>, b: impl Into<String>) -> Self {
        self.role_conflicts.push((a.into(), b.into()));
        self
    }
}

pub fn create_group(world: &mut World, spec: GroupSpec) -> Result<EntityId, OrganizationError> {
    if find_group(world, &spec.name).is_some() {
        return Err(OrganizationError::DuplicateGroup(spec.name));
    }
    validate_policies(&spec.policies)?;
    let structure = match &spec.parent {
        None => Structure::Flat,
        Some(parent) if *parent == spec.name => return Err(OrganizationError::CycleDetected(spec.name)),
        Some(parent) => Structure::Hierarchical { parent: resolve_group(world, parent)? },
    };
    let id = world.create_entity()?;
    world.insert(
        id,
        GroupComponent {
            name: spec.name,
            members: BTreeSet::new(),
            policies: spec.policies.into_iter().map(|p| (p.name.clone(), p)).collect(),
            structure,
            role_conflicts: spec.role_conflicts.into_iter().collect(),
            invited: BTreeSet::new(),
        },
    )?;
    Ok(id)
}

/// Re-parents a group, refusing changes that would close a cycle.
pub fn set_structure(world: &mut World, group_id: EntityId, structure: Structure) -> Result<(), OrganizationError> {
    let name = group(world, group_id)?.name.clone();
    if let Structure::Hierarchical { parent } = structure {
        group(world, parent)?;
        check_chain(world, &name, group_id, Some(parent))?;
    }
    group_mut(world, group_id)?.structure = structure;
    Ok(())
}

/// Parent chain from `group_id` up to its root, starting with `group_id`.
pub fn ancestry(world: &World, group_id: EntityId) -> Result<Vec<EntityId>, OrganizationError> {
    let mut chain = vec![group_id];
    let mut current = group_id;
    while let Structure::Hierarchical { parent } = group(world, current)?.structure {
        if chain.contains(&parent) {
            return Err(OrganizationError::CycleDetected(group(world, group_id)?.name.clone()));
        }
        chain.push(parent);
        current = parent;
    }
    Ok(chain)
}

pub fn invite(world: &mut World, agent: EntityId, group_id: EntityId) -> Result<(), OrganizationError> {
    ensure_agent(world, agent)?;
    group_mut(world, group_id)?.invited.insert(agent);
    Ok(())
}

fn ensure_agent(world: &World, agent: EntityId) -> Result<(), OrganizationError> {
    match world.get::<AgentComponent>(agent)? {
        Some(_) => Ok(()),
        None => Err(OrganizationError::NotAnAgent(agent)),
    }
}

/// Adds `agent` to the group after checking its policies. Joining a group
/// the agent already belongs to is a no-op.
pub fn join_group(world: &mut World, agent: EntityId, group_id: EntityId) -> Result<(), OrganizationError> {
    ensure_agent(world, agent)?;
    let g = group(world, group_id)?;
    if g.members.contains(&agent) {
        return Ok(());
    }
    let held = world.get::<RoleComponent>(agent)?;
    for policy in g.policies.values() {
        let allowed = match &policy.kind {
            PolicyKind::Open => true,
            PolicyKind::MaxMembers(n) => g.members.len() < *n,
            PolicyKind::InviteOnly => g.invited.contains(&agent),
            PolicyKind::RoleRequired(role) => held.is_some_and(|r| r.holds(role)),
        };
        if !allowed {
            return Err(OrganizationError::PolicyViolation { policy: policy.name.clone() });
        }
    }
    let g = group_mut(world, group_id)?;
    g.members.insert(agent);
    g.invited.remove(&agent);
    world.emit_event(
        EventRecord::new(GROUP_EVENT).with_source(agent).with("group", group_id.to_string()).with("change", "joined"),
        DispatchMode::Queued,
    )?;
    Ok(())
}

/// Removes membership and every role held in that group.
pub fn leave_group(world: &mut World, agent: EntityId, group_id: EntityId) -> Result<(), OrganizationError> {
    if !group_mut(world, group_id)?.members.remove(&agent) {
        return Err(OrganizationError::NotAMember { agent, group: group_id });
    }
    if let Some(roles) = world.get_mut::<RoleComponent>(agent)? {
        roles.drop_group(group_id);
    }
    world.emit_event(
        EventRecord::new(GROUP_EVENT).with_source(agent).with("group", group_id.to_string()).with("change", "left"),
        DispatchMode::Queued,
    )?;
    Ok(())
}

/// Groups `agent` belongs to, ascending by id.
pub fn groups_of(world: &World, agent: EntityId) -> Vec<EntityId> {
    let Ok(store) = world.store::<GroupComponent>() else {
        return Vec::new();
    };
    let mut out: Vec<EntityId> = store
        .iter()
        .filter(|(_, g)| g.members.contains(&agent))
        .filter_map(|(index, _)| world.entity_at(index))
        .collect();
    out.sort();
    out
}

/// Grants `role` in `group_id` with `capabilities`. The first role an
/// agent receives becomes its active role.
pub fn assign_role(
    world: &mut World,
    agent: EntityId,
    role: &str,
    group_id: EntityId,
    capabilities: impl IntoIterator<Item = String>,
) -> Result<(), OrganizationError> {
    let g = group(world, group_id)?;
    if !g.members.contains(&agent) {
        return Err(OrganizationError::NotAMember { agent, group: group_id });
    }
    if let Some(held) = world.get::<RoleComponent>(agent)? {
        if let Some(existing) =
            held.roles.iter().filter(|r| r.group == group_id && r.role != role).find(|r| g.conflicts(&r.role, role))
        {
            return Err(OrganizationError::RoleConflict {
                requested: role.to_owned(),
                existing: existing.role.clone(),
            });
        }
    }
    if world.get::<RoleComponent>(agent)?.is_none() {
        world.insert(agent, RoleComponent::default())?;
    }
    let rc = world.get_mut::<RoleComponent>(agent)?.expect("inserted above");
    let role_ref = RoleRef { role: role.to_owned(), group: group_id };
    rc.roles.insert(role_ref.clone());
    rc.permissions.entry(role.to_owned()).or_default().extend(capabilities);
    if rc.active_role.is_none() {
        rc.active_role = Some(role_ref);
    }
    Ok(())
}

/// Makes a held role the active one.
pub fn activate_role(world: &mut World, agent: EntityId, role: RoleRef) -> Result<(), OrganizationError> {
    match world.get_mut::<RoleComponent>(agent)? {
        Some(rc) if rc.roles.contains(&role) => {
            rc.active_role = Some(role);
            Ok(())
        }
        _ => Err(OrganizationError::RoleNotHeld { agent, role }),
    }
}

/// True iff the agent's active role grants `capability`.
pub fn check_permission(world: &World, agent: EntityId, capability: &str) -> bool {
    let Ok(Some(rc)) = world.get::<RoleComponent>(agent) else {
        return false;
    };
    rc.active_role
        .as_ref()
        .and_then(|active| rc.permissions.get(&active.role))
        .is_some_and(|caps| caps.contains(capability))
}
