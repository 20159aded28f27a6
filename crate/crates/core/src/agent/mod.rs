//! Agents as entities.
//!
//! An agent is an entity carrying [`ObjectComponent`], [`AgentComponent`],
//! [`BeliefComponent`], [`GoalComponent`] and [`IntentionComponent`].
//! Declarative behaviour (rules and plans) lives in the object's
//! [`Behavior`] and is interpreted by the reasoning systems each tick:
//! reactive agents fire rules over raw percepts, cognitive agents fire
//! rules over revised beliefs, and BDI agents run the goal/plan cycle in
//! [`bdi_step`].

mod reasoning;
mod spec;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use reasoning::{
    bdi_step, cognitive_step, planning_pass, reactive_step, revise_beliefs, select_goal, select_rule, PerceptCache,
};
pub use spec::{AgentSpec, Diagnostic, RoleSpec};

use crate::ecs::{Component, DispatchMode, EcsError, EntityId, EventRecord, Level, SystemDescriptor, World};
use crate::environment::{self, Percept, Position};
use crate::messaging::{self, MessageComponent};
use crate::organization::{self, OrganizationError, RoleComponent, RoleRef};
use crate::predicate::Predicate;

pub const LIFECYCLE_SYSTEM: &str = "lifecycle";
pub const PERCEPTION_SYSTEM: &str = "perception";
pub const AGENT_SYSTEM: &str = "agent";
pub const PLANNING_SYSTEM: &str = "planning";
pub const STATE_EVENT: &str = "agent-state-changed";
pub const GOAL_EVENT: &str = "goal-achieved";
pub const CREATED_EVENT: &str = "entity-created";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Reactive,
    Cognitive,
    Bdi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum AgentState {
    Initializing,
    Active,
    Suspended,
    Terminated,
}

impl AgentState {
    /// Legal moves: initializing→active, active↔suspended,
    /// active/suspended→terminated. Staying put is always allowed.
    pub fn can_become(self, target: AgentState) -> bool {
        use AgentState::*;
        self == target
            || matches!(
                (self, target),
                (Initializing, Active) | (Active, Suspended) | (Suspended, Active) | (Active | Suspended, Terminated)
            )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgentState::Initializing => "initializing",
            AgentState::Active => "active",
            AgentState::Suspended => "suspended",
            AgentState::Terminated => "terminated",
        }
    }
}

impl fmt::Display for AgentState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum RevisionStrategy {
    /// The latest percept per key wins.
    #[default]
    Overwrite,
    /// A percept replaces a belief only if at least as confident.
    MaxConfidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct BehaviorRule {
    pub trigger: Predicate,
    pub action: environment::ActionKind,
    #[serde(default)]
    pub salience: i64,
}

/// One step of a plan: either an action handed to the environment or an
/// internal step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum PlanStep {
    /// One move along a shortest path to the cell; no action once there.
    MoveToward { x: i64, y: i64 },
    /// Sets a belief with confidence 1.
    Believe { key: String, value: Value },
    #[serde(untagged)]
    Act(environment::ActionKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase")]
pub struct Plan {
    pub id: String,
    /// Goal id, or a prefix ending in `*`.
    pub achieves_goal: String,
    #[serde(default)]
    pub context: Predicate,
    pub steps: Vec<PlanStep>,
    /// Start over after the last step instead of finishing.
    #[serde(default)]
    pub repeat: bool,
}

impl Plan {
    pub fn achieves(&self, goal_id: &str) -> bool {
        match self.achieves_goal.strip_suffix('*') {
            Some(prefix) => goal_id.starts_with(prefix),
            None => self.achieves_goal == goal_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase")]
pub struct Goal {
    pub id: String,
    /// Achieved once this holds over the beliefs.
    pub condition: Predicate,
    #[serde(default)]
    pub priority: i64,
    /// Each must hold for the goal to be pursued.
    #[serde(default)]
    pub constraints: Vec<Predicate>,
    /// Restricts plan selection to these plan ids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plans: Option<Vec<String>>,
}

impl Goal {
    pub fn new(id: impl Into<String>, condition: Predicate, priority: i64) -> Self {
        Self { id: id.into(), condition, priority, constraints: Vec::new(), plans: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Behavior {
    #[serde(default)]
    pub rules: Vec<BehaviorRule>,
    #[serde(default)]
    pub plans: Vec<Plan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ObjectComponent {
    pub object_type: String,
    #[serde(default)]
    pub properties: BTreeMap<String, Value>,
    #[serde(default)]
    pub behavior: Option<Behavior>,
}

impl Component for ObjectComponent {
    const KIND: &'static str = "object";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentComponent {
    pub name: String,
    pub architecture: Architecture,
    pub state: AgentState,
    pub autonomy_level: f64,
    pub perception_radius: u64,
}

impl Component for AgentComponent {
    const KIND: &'static str = "agent";
}

impl AgentComponent {
    /// Whether the reasoning systems run this agent.
    pub fn reasons(&self) -> bool {
        self.state == AgentState::Active && self.autonomy_level > 0.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BeliefComponent {
    pub beliefs: BTreeMap<String, Value>,
    pub confidence_values: BTreeMap<String, f64>,
    pub revision_strategy: RevisionStrategy,
}

impl Component for BeliefComponent {
    const KIND: &'static str = "belief";
}

impl BeliefComponent {
    pub fn new(strategy: RevisionStrategy) -> Self {
        Self { revision_strategy: strategy, ..Self::default() }
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.beliefs.get(key)
    }

    pub fn set(&mut self, key: impl Into<String>, value: Value, confidence: f64) {
        let key = key.into();
        self.confidence_values.insert(key.clone(), clamp_confidence(confidence));
        self.beliefs.insert(key, value);
    }
}

pub(crate) fn clamp_confidence(c: f64) -> f64 {
    if c.is_nan() {
        0.0
    } else {
        c.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GoalComponent {
    /// Open goals, highest priority first, ties by ascending id.
    pub goals: Vec<Goal>,
    pub achievements: BTreeSet<String>,
    /// Goals abandoned by a drop-goal contingency.
    #[serde(default)]
    pub dropped: BTreeSet<String>,
}

impl Component for GoalComponent {
    const KIND: &'static str = "goal";
}

impl GoalComponent {
    pub fn new(mut goals: Vec<Goal>) -> Self {
        sort_goals(&mut goals);
        Self { goals, ..Self::default() }
    }

    pub fn goal(&self, id: &str) -> Option<&Goal> {
        self.goals.iter().find(|g| g.id == id)
    }
}

pub(crate) fn sort_goals(goals: &mut [Goal]) {
    goals.sort_by(|a, b| b.priority.cmp(&a.priority).then_with(|| a.id.cmp(&b.id)));
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase")]
pub struct Intention {
    pub goal_id: String,
    pub plan_id: String,
    pub step_index: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum ExecutionState {
    #[default]
    Idle,
    Executing,
    /// The selected goal has no applicable plan.
    Blocked,
    /// The last step failed and the contingency gave up on the goal.
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    /// The environment blocked or rejected the step's action.
    ActionBlocked,
    /// A move-toward step has no route to its cell.
    NoPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum RecoveryPolicy {
    /// Run the failed step again next tick.
    Retry,
    DropGoal,
    /// Abandon the plan and select another one for the same goal.
    Replan,
}

/// An action handed to the environment whose outcome is not yet known.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AwaitedStep {
    pub intention: Intention,
    pub tick: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IntentionComponent {
    pub intentions: Vec<Intention>,
    pub execution_state: ExecutionState,
    pub contingencies: BTreeMap<FailureKind, RecoveryPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub awaiting: Option<AwaitedStep>,
    /// Plans ruled out per goal by earlier replans.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub excluded: BTreeMap<String, BTreeSet<String>>,
}

impl Component for IntentionComponent {
    const KIND: &'static str = "intention";
}

impl IntentionComponent {
    pub fn current(&self) -> Option<&Intention> {
        self.intentions.first()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("invalid agent spec: {}", format_diagnostics(.0))]
    InvalidSpec(Vec<Diagnostic>),
    #[error("illegal transition {from} -> {to}")]
    IllegalTransition { from: AgentState, to: AgentState },
    #[error("{0} is not an agent")]
    NotAnAgent(EntityId),
    #[error("agent {id} is {actual:?}, not {expected:?}")]
    WrongArchitecture { id: EntityId, expected: Architecture, actual: Architecture },
    #[error(transparent)]
    Organization(#[from] OrganizationError),
    #[error(transparent)]
    Ecs(#[from] EcsError),
}

fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl AgentError {
    pub fn code(&self) -> &'static str {
        match self {
            AgentError::InvalidSpec(_) => "invalid-spec",
            AgentError::IllegalTransition { .. } => "illegal-transition",
            AgentError::NotAnAgent(_) => "not-an-agent",
            AgentError::WrongArchitecture { .. } => "wrong-architecture",
            AgentError::Organization(e) => e.code(),
            AgentError::Ecs(EcsError::StaleEntity(_)) => "stale-entity",
            AgentError::Ecs(_) => "internal",
        }
    }
}

/// Registers the agent components and the `lifecycle`, `perception` and
/// `agent` systems, in that order.
pub fn install(world: &mut World, after: &[&str]) -> Result<(), EcsError> {
    world.register::<ObjectComponent>()?;
    world.register::<AgentComponent>()?;
    world.register::<BeliefComponent>()?;
    world.register::<GoalComponent>()?;
    world.register::<IntentionComponent>()?;
    world.register_event_kind(STATE_EVENT);
    world.register_event_kind(GOAL_EVENT);
    world.register_event_kind(CREATED_EVENT);
    world.insert_resource(PerceptCache::default());
    world.register_system(
        SystemDescriptor::new(LIFECYCLE_SYSTEM).writes([AgentComponent::KIND]).after(after.iter().copied()),
        |world| {
            activate_initializing(world)?;
            Ok(())
        },
    )?;
    world.register_system(
        SystemDescriptor::new(PERCEPTION_SYSTEM).reads([AgentComponent::KIND]).after([LIFECYCLE_SYSTEM]),
        |world| {
            reasoning::perception_system(world)?;
            Ok(())
        },
    )?;
    world.register_system(
        SystemDescriptor::new(AGENT_SYSTEM)
            .reads([AgentComponent::KIND, ObjectComponent::KIND])
            .writes([BeliefComponent::KIND, GoalComponent::KIND, IntentionComponent::KIND])
            .after([PERCEPTION_SYSTEM]),
        |world| {
            reasoning::agent_system(world)?;
            Ok(())
        },
    )
}

/// Registers the `planning` system, which re-perceives after actions have
/// been applied and records goals they achieved.
pub fn install_planning(world: &mut World, after: &[&str]) -> Result<(), EcsError> {
    world.register_system(
        SystemDescriptor::new(PLANNING_SYSTEM)
            .reads([AgentComponent::KIND])
            .writes([BeliefComponent::KIND, GoalComponent::KIND, IntentionComponent::KIND])
            .after(after.iter().copied()),
        |world| {
            for id in world.query(&[AgentComponent::KIND])? {
                planning_pass(world, id)?;
            }
            Ok(())
        },
    )
}

fn activate_initializing(world: &mut World) -> Result<(), EcsError> {
    let mut pending: Vec<EntityId> = world
        .store::<AgentComponent>()?
        .iter()
        .filter(|(_, a)| a.state == AgentState::Initializing)
        .filter_map(|(i, _)| world.entity_at(i))
        .collect();
    pending.sort();
    for id in pending {
        change_state(world, id, AgentState::Active)?;
    }
    Ok(())
}

fn change_state(world: &mut World, id: EntityId, target: AgentState) -> Result<(), EcsError> {
    let Some(agent) = world.get_mut::<AgentComponent>(id)? else {
        return Ok(());
    };
    let from = agent.state;
    agent.state = target;
    world.log(Level::Info, "agent-state", &[("agent", &id), ("from", &from), ("to", &target)]);
    world.emit_event(
        EventRecord::new(STATE_EVENT).with_source(id).with("from", from.as_str()).with("to", target.as_str()),
        DispatchMode::Queued,
    )
}

/// Moves the agent to `target` if legal. Same-state requests succeed
/// without effect.
pub fn set_agent_state(world: &mut World, id: EntityId, target: AgentState) -> Result<(), AgentError> {
    let agent = world.get::<AgentComponent>(id)?.ok_or(AgentError::NotAnAgent(id))?;
    let from = agent.state;
    if !from.can_become(target) {
        return Err(AgentError::IllegalTransition { from, to: target });
    }
    if from != target {
        change_state(world, id, target)?;
    }
    Ok(())
}

/// Creates an agent from a validated spec. The agent starts out
/// initializing and becomes active at the next tick. On any failure the
/// half-built entity is destroyed again.
pub fn spawn_agent(world: &mut World, spec: AgentSpec) -> Result<EntityId, AgentError> {
    spec.validate()?;
    let mut diags = Vec::new();
    let mut groups = Vec::with_capacity(spec.groups.len());
    for (i, name) in spec.groups.iter().enumerate() {
        match organization::resolve_group(world, name) {
            Ok(id) => groups.push(id),
            Err(_) => diags.push(Diagnostic::new(format!("groups[{i}]"), format!("unknown group `{name}`"))),
        }
    }
    if let (Some(pos), Some(grid)) = (spec.position, world.resource::<environment::GridEnvironment>()) {
        if let Err(e) = grid.check(pos) {
            diags.push(Diagnostic::new("position", e.to_string()));
        }
    }
    if !diags.is_empty() {
        return Err(AgentError::InvalidSpec(diags));
    }

    let id = world.create_entity()?;
    match build_agent(world, id, spec, &groups) {
        Ok(()) => {
            world.log(Level::Info, "agent-spawned", &[("agent", &id)]);
            world.emit_event(EventRecord::new(CREATED_EVENT).with_source(id), DispatchMode::Queued)?;
            Ok(id)
        }
        Err(e) => {
            world.destroy_entity(id)?;
            Err(e)
        }
    }
}

fn build_agent(world: &mut World, id: EntityId, spec: AgentSpec, groups: &[EntityId]) -> Result<(), AgentError> {
    let mut beliefs = BeliefComponent::new(spec.revision_strategy);
    for (k, v) in spec.initial_beliefs {
        beliefs.set(k, v, 1.0);
    }
    world.insert(
        id,
        ObjectComponent {
            object_type: spec.object_type.unwrap_or_else(|| "agent".to_owned()),
            properties: spec.properties,
            behavior: Some(Behavior { rules: spec.rules, plans: spec.plans }),
        },
    )?;
    world.insert(
        id,
        AgentComponent {
            name: spec.name,
            architecture: spec.architecture,
            state: AgentState::Initializing,
            autonomy_level: spec.autonomy_level,
            perception_radius: spec.perception_radius,
        },
    )?;
    world.insert(id, beliefs)?;
    world.insert(id, GoalComponent::new(spec.goals))?;
    world.insert(id, IntentionComponent { contingencies: spec.contingencies, ..IntentionComponent::default() })?;
    if let Some(pos) = spec.position {
        world.insert(id, pos)?;
    }
    for &group in groups {
        organization::join_group(world, id, group)?;
    }
    for role in spec.roles {
        let group = organization::resolve_group(world, &role.group)?;
        organization::assign_role(world, id, &role.role, group, role.capabilities)?;
    }
    if !spec.topics.is_empty() && world.resource::<messaging::Messaging>().is_some() {
        for topic in &spec.topics {
            messaging::subscribe_topic(world, id, topic).map_err(|e| match e {
                messaging::MessagingError::Ecs(e) => AgentError::Ecs(e),
                other => AgentError::InvalidSpec(vec![Diagnostic::new("topics", other.to_string())]),
            })?;
        }
    }
    Ok(())
}

/// Everything an operator sees about one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase")]
pub struct AgentView {
    pub id: EntityId,
    pub name: String,
    pub architecture: Architecture,
    pub state: AgentState,
    pub autonomy_level: f64,
    pub beliefs: BTreeMap<String, Value>,
    pub confidence_values: BTreeMap<String, f64>,
    pub goals: Vec<Goal>,
    pub achievements: BTreeSet<String>,
    pub dropped_goals: BTreeSet<String>,
    pub intention: Option<Intention>,
    pub execution_state: ExecutionState,
    pub roles: Vec<RoleRef>,
    pub active_role: Option<RoleRef>,
    pub groups: Vec<EntityId>,
    pub position: Option<Position>,
    pub inbox: usize,
}

pub fn agent_view(world: &World, id: EntityId) -> Result<AgentView, AgentError> {
    let agent = world.get::<AgentComponent>(id)?.ok_or(AgentError::NotAnAgent(id))?;
    let beliefs = world.get::<BeliefComponent>(id)?.cloned().unwrap_or_default();
    let goals = world.get::<GoalComponent>(id)?.cloned().unwrap_or_default();
    let intention = world.get::<IntentionComponent>(id)?.cloned().unwrap_or_default();
    let roles = world.get::<RoleComponent>(id).ok().flatten().cloned().unwrap_or_default();
    let inbox = world.get::<MessageComponent>(id).ok().flatten().map_or(0, |m| m.inbox.len());
    Ok(AgentView {
        id,
        name: agent.name.clone(),
        architecture: agent.architecture,
        state: agent.state,
        autonomy_level: agent.autonomy_level,
        beliefs: beliefs.beliefs,
        confidence_values: beliefs.confidence_values,
        goals: goals.goals,
        achievements: goals.achievements,
        dropped_goals: goals.dropped,
        intention: intention.current().cloned(),
        execution_state: intention.execution_state,
        roles: roles.roles.into_iter().collect(),
        active_role: roles.active_role,
        groups: organization::groups_of(world, id),
        position: world.get::<Position>(id).ok().flatten().copied(),
        inbox,
    })
}

/// First agent with this name, by ascending id.
pub fn find_agent(world: &World, name: &str) -> Option<EntityId> {
    let store = world.store::<AgentComponent>().ok()?;
    store.iter().filter(|(_, a)| a.name == name).filter_map(|(i, _)| world.entity_at(i)).min()
}

/// Current percepts for `id`: those gathered by this tick's perception
/// pass, or a fresh observation outside a tick.
pub fn current_percepts(world: &World, id: EntityId) -> Result<Vec<Percept>, EcsError> {
    if world.is_ticking() {
        if let Some(cached) = world.resource::<PerceptCache>().and_then(|c| c.get(id)) {
            return Ok(cached.to_vec());
        }
    }
    let radius = world.get::<AgentComponent>(id)?.map_or(0, |a| a.perception_radius);
    environment::perceive(world, id, radius)
}
