use std::collections::{BTreeMap, BTreeSet};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{occupancy, GridEnvironment, Position};
use crate::agent::{AgentComponent, AgentState};
use crate::ecs::{DispatchMode, EcsError, EntityId, EventRecord, Level, World};
use crate::messaging::{self, OutgoingMessage};

pub const COLLISION_EVENT: &str = "collision";
pub const INTERACTION_EVENT: &str = "interaction";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum ActionKind {
    /// Unit step in the 4-neighbourhood.
    Move {
        dx: i64,
        dy: i64,
    },
    /// Acts on an entity in the same or an adjacent cell.
    Interact {
        target: EntityId,
    },
    /// Sends a message on the issuer's behalf.
    Say(OutgoingMessage),
    Noop,
}

impl ActionKind {
    pub fn name(&self) -> &'static str {
        match self {
            ActionKind::Move { .. } => "move",
            ActionKind::Interact { .. } => "interact",
            ActionKind::Say(_) => "say",
            ActionKind::Noop => "noop",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ActionDescriptor {
    pub issuer: EntityId,
    pub kind: ActionKind,
}

impl ActionDescriptor {
    pub fn new(issuer: EntityId, kind: ActionKind) -> Self {
        Self { issuer, kind }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeStatus {
    Applied,
    /// The world prevented the action (edge, obstacle, out of reach).
    Blocked,
    /// The action was not admissible (inactive issuer, malformed step).
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase")]
pub struct ActionOutcome {
    pub issuer: EntityId,
    pub action: ActionKind,
    pub status: OutcomeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub tick: u64,
}

/// Actions waiting for the next environment pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionInbox {
    pub pending: Vec<ActionDescriptor>,
}

/// Outcomes of the latest environment pass, plus the latest outcome per
/// issuer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionLog {
    pub recent: Vec<ActionOutcome>,
    pub last: BTreeMap<EntityId, ActionOutcome>,
}

/// Stages an action for the next environment pass.
pub fn submit_action(world: &mut World, action: ActionDescriptor) {
    if world.resource::<ActionInbox>().is_none() {
        world.insert_resource(ActionInbox::default());
    }
    world.resource_mut::<ActionInbox>().expect("inserted above").pending.push(action);
}

pub fn last_outcome(world: &World, issuer: EntityId) -> Option<&ActionOutcome> {
    world.resource::<ActionLog>()?.last.get(&issuer)
}

/// Applies one action immediately. See [`apply_actions`].
pub fn apply_action(world: &mut World, action: ActionDescriptor) -> Result<ActionOutcome, EcsError> {
    Ok(apply_actions(world, vec![action])?.remove(0))
}

/// Applies a batch in issuer-index order (stable for one issuer), returning
/// one outcome per action in that order. Moves may share a cell; each cell
/// that ends up shared by a mover and someone else yields one queued
/// collision event.
pub fn apply_actions(world: &mut World, mut batch: Vec<ActionDescriptor>) -> Result<Vec<ActionOutcome>, EcsError> {
    batch.sort_by_key(|a| a.issuer.index);
    let tick = world.current_tick();
    let mut entered = BTreeSet::new();
    let mut outcomes = Vec::with_capacity(batch.len());
    for action in batch {
        let (status, reason) = apply_one(world, &action, &mut entered)?;
        if status != OutcomeStatus::Applied {
            world.log(
                Level::Debug,
                "action-failed",
                &[
                    ("issuer", &action.issuer),
                    ("action", &action.kind.name()),
                    ("reason", &reason.as_deref().unwrap_or("")),
                ],
            );
        }
        outcomes.push(ActionOutcome { issuer: action.issuer, action: action.kind, status, reason, tick });
    }

    if !entered.is_empty() {
        let occupied = occupancy(world);
        for cell in entered {
            let Some(ids) = occupied.get(&cell).filter(|ids| ids.len() > 1) else {
                continue;
            };
            let names: Vec<String> = ids.iter().map(ToString::to_string).collect();
            world.emit_event(
                EventRecord::new(COLLISION_EVENT).with("x", cell.x).with("y", cell.y).with("entities", names),
                DispatchMode::Queued,
            )?;
        }
    }

    if world.resource::<ActionLog>().is_none() {
        world.insert_resource(ActionLog::default());
    }
    let log = world.resource_mut::<ActionLog>().expect("inserted above");
    log.recent = outcomes.clone();
    for outcome in &outcomes {
        log.last.insert(outcome.issuer, outcome.clone());
    }
    Ok(outcomes)
}

type Verdict = (OutcomeStatus, Option<String>);

fn verdict(status: OutcomeStatus, reason: &str) -> Verdict {
    (status, Some(reason.to_owned()))
}

fn apply_one(
    world: &mut World,
    action: &ActionDescriptor,
    entered: &mut BTreeSet<Position>,
) -> Result<Verdict, EcsError> {
    let issuer = action.issuer;
    if !world.is_live(issuer) {
        return Ok(verdict(OutcomeStatus::Rejected, "stale-issuer"));
    }
    if let Some(agent) = world.get::<AgentComponent>(issuer)? {
        if agent.state != AgentState::Active {
            return Ok(verdict(OutcomeStatus::Rejected, "inactive"));
        }
    }
    match &action.kind {
        ActionKind::Noop => Ok((OutcomeStatus::Applied, None)),
        ActionKind::Move { dx, dy } => {
            if dx.abs() + dy.abs() != 1 {
                return Ok(verdict(OutcomeStatus::Rejected, "not-a-unit-step"));
            }
            let Some(&from) = world.get::<Position>(issuer)? else {
                return Ok(verdict(OutcomeStatus::Rejected, "no-position"));
            };
            let to = from.offset(*dx, *dy);
            if let Some(grid) = world.resource::<GridEnvironment>() {
                if !grid.contains(to) {
                    return Ok(verdict(OutcomeStatus::Blocked, "out-of-bounds"));
                }
                if grid.is_obstacle(to) {
                    return Ok(verdict(OutcomeStatus::Blocked, "obstacle"));
                }
            }
            world.insert(issuer, to)?;
            entered.insert(to);
            Ok((OutcomeStatus::Applied, None))
        }
        ActionKind::Interact { target } => {
            if !world.is_live(*target) {
                return Ok(verdict(OutcomeStatus::Blocked, "unknown-target"));
            }
            let reach = match (world.get::<Position>(issuer)?, world.get::<Position>(*target)?) {
                (Some(a), Some(b)) => a.chebyshev(*b) <= 1,
                _ => false,
            };
            if !reach {
                return Ok(verdict(OutcomeStatus::Blocked, "out-of-reach"));
            }
            world.emit_event(
                EventRecord::new(INTERACTION_EVENT).with_source(issuer).with("target", target.to_string()),
                DispatchMode::Queued,
            )?;
            Ok((OutcomeStatus::Applied, None))
        }
        ActionKind::Say(message) => match messaging::send(world, issuer, message.clone()) {
            Ok(_) => Ok((OutcomeStatus::Applied, None)),
            Err(messaging::MessagingError::Ecs(e)) => Err(e),
            Err(e) => Ok((OutcomeStatus::Blocked, Some(e.to_string()))),
        },
    }
}
