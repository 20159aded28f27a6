//! Spatial and non-spatial world models, perception and actions.
//!
//! The spatial model is an optional [`GridEnvironment`] resource: a
//! bounded grid with obstacle cells. Entities are placed by giving them a
//! [`Position`]; occupancy is derived from positions rather than stored.
//! Several entities may share a cell. The non-spatial model is the
//! [`FactRegistry`], a key/value store with per-fact visibility.

mod action;
mod path;

use std::collections::{BTreeMap, BTreeSet};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use action::{
    apply_action, apply_actions, last_outcome, submit_action, ActionDescriptor, ActionInbox, ActionKind, ActionLog,
    ActionOutcome, OutcomeStatus, COLLISION_EVENT, INTERACTION_EVENT,
};
pub use path::{next_step_toward, shortest_path};

use crate::agent::ObjectComponent;
use crate::ecs::{Component, EcsError, EntityId, SystemDescriptor, World};

pub const ENVIRONMENT_SYSTEM: &str = "environment";
pub const MOVEMENT_SYSTEM: &str = "movement";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
pub struct Position {
    pub x: i64,
    pub y: i64,
}

impl Position {
    pub const fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }

    pub fn chebyshev(self, other: Position) -> u64 {
        self.x.abs_diff(other.x).max(self.y.abs_diff(other.y))
    }

    pub fn manhattan(self, other: Position) -> u64 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }

    pub fn offset(self, dx: i64, dy: i64) -> Position {
        Position::new(self.x + dx, self.y + dy)
    }
}

impl Component for Position {
    const KIND: &'static str = "position";
}

/// Per-tick displacement applied by the movement system.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Velocity {
    pub dx: i64,
    pub dy: i64,
}

impl Component for Velocity {
    const KIND: &'static str = "velocity";
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvironmentError {
    #[error("grid dimensions must be positive, got {width}x{height}")]
    EmptyGrid { width: u32, height: u32 },
    #[error("cell ({}, {}) is outside the grid", .0.x, .0.y)]
    OutOfBounds(Position),
    #[error("cell ({}, {}) is an obstacle", .0.x, .0.y)]
    Obstacle(Position),
    #[error("cell ({}, {}) is occupied", .0.x, .0.y)]
    Occupied(Position),
}

impl EnvironmentError {
    pub fn code(&self) -> &'static str {
        match self {
            EnvironmentError::EmptyGrid { .. } => "invalid-grid",
            EnvironmentError::OutOfBounds(_) => "out-of-bounds",
            EnvironmentError::Obstacle(_) => "obstacle",
            EnvironmentError::Occupied(_) => "occupied",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct GridEnvironment {
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    obstacles: BTreeSet<Position>,
}

impl GridEnvironment {
    pub fn new(width: u32, height: u32) -> Result<Self, EnvironmentError> {
        if width == 0 || height == 0 {
            return Err(EnvironmentError::EmptyGrid { width, height });
        }
        Ok(Self { width, height, obstacles: BTreeSet::new() })
    }

    pub fn with_obstacles(mut self, cells: impl IntoIterator<Item = Position>) -> Result<Self, EnvironmentError> {
        for cell in cells {
            if !self.contains(cell) {
                return Err(EnvironmentError::OutOfBounds(cell));
            }
            self.obstacles.insert(cell);
        }
        Ok(self)
    }

    pub fn contains(&self, cell: Position) -> bool {
        (0..i64::from(self.width)).contains(&cell.x) && (0..i64::from(self.height)).contains(&cell.y)
    }

    pub fn is_obstacle(&self, cell: Position) -> bool {
        self.obstacles.contains(&cell)
    }

    /// In bounds and not an obstacle.
    pub fn is_passable(&self, cell: Position) -> bool {
        self.contains(cell) && !self.is_obstacle(cell)
    }

    pub fn check(&self, cell: Position) -> Result<(), EnvironmentError> {
        if !self.contains(cell) {
            Err(EnvironmentError::OutOfBounds(cell))
        } else if self.is_obstacle(cell) {
            Err(EnvironmentError::Obstacle(cell))
        } else {
            Ok(())
        }
    }

    pub fn obstacles(&self) -> impl Iterator<Item = Position> + '_ {
        self.obstacles.iter().copied()
    }

    /// 4-neighbourhood in a fixed order: east, west, south, north.
    pub fn neighbors(&self, cell: Position) -> impl Iterator<Item = Position> + '_ {
        [(1, 0), (-1, 0), (0, 1), (0, -1)]
            .into_iter()
            .map(move |(dx, dy)| cell.offset(dx, dy))
            .filter(|&c| self.is_passable(c))
    }
}

/// Installs `grid` as the world's spatial model. Fails if an obstacle sits
/// under an already positioned entity.
pub fn set_grid(world: &mut World, grid: GridEnvironment) -> Result<(), EnvironmentError> {
    if let Ok(store) = world.store::<Position>() {
        for &pos in store.dense() {
            grid.check(pos)?;
        }
    }
    world.insert_resource(grid);
    Ok(())
}

/// Adds an obstacle to the installed grid.
pub fn add_obstacle(world: &mut World, cell: Position) -> Result<(), EnvironmentError> {
    if occupancy(world).contains_key(&cell) {
        return Err(EnvironmentError::Occupied(cell));
    }
    if let Some(grid) = world.resource_mut::<GridEnvironment>() {
        if !grid.contains(cell) {
            return Err(EnvironmentError::OutOfBounds(cell));
        }
        grid.obstacles.insert(cell);
    }
    Ok(())
}

/// Cell → entities standing on it.
pub fn occupancy(world: &World) -> BTreeMap<Position, BTreeSet<EntityId>> {
    let mut out: BTreeMap<Position, BTreeSet<EntityId>> = BTreeMap::new();
    if let Ok(store) = world.store::<Position>() {
        for (index, &pos) in store.iter() {
            if let Some(id) = world.entity_at(index) {
                out.entry(pos).or_default().insert(id);
            }
        }
    }
    out
}

/// Places `id` at `pos`, validating against the grid if one is installed.
pub fn place(world: &mut World, id: EntityId, pos: Position) -> Result<(), PlaceError> {
    if let Some(grid) = world.resource::<GridEnvironment>() {
        grid.check(pos)?;
    }
    world.insert(id, pos)?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum PlaceError {
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
    #[error(transparent)]
    Ecs(#[from] EcsError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum Visibility {
    #[default]
    All,
    Only(BTreeSet<EntityId>),
}

impl Visibility {
    pub fn permits(&self, id: EntityId) -> bool {
        match self {
            Visibility::All => true,
            Visibility::Only(ids) => ids.contains(&id),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FactRegistry {
    facts: BTreeMap<String, Value>,
    visibility: BTreeMap<String, Visibility>,
}

impl FactRegistry {
    pub fn set(&mut self, key: impl Into<String>, value: Value, visibility: Visibility) {
        let key = key.into();
        self.facts.insert(key.clone(), value);
        self.visibility.insert(key, visibility);
    }

    pub fn remove(&mut self, key: &str) -> Option<Value> {
        self.visibility.remove(key);
        self.facts.remove(key)
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.facts.get(key)
    }

    pub fn visibility(&self, key: &str) -> Option<&Visibility> {
        self.visibility.get(key)
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    /// Facts `viewer` may see, ascending by key.
    pub fn visible_to(&self, viewer: EntityId) -> impl Iterator<Item = (&str, &Value)> {
        self.facts
            .iter()
            .filter(move |(k, _)| self.visibility.get(*k).is_none_or(|v| v.permits(viewer)))
            .map(|(k, v)| (k.as_str(), v))
    }

    fn forget(&mut self, id: EntityId) {
        for vis in self.visibility.values_mut() {
            if let Visibility::Only(ids) = vis {
                ids.remove(&id);
            }
        }
    }
}

pub fn set_fact(world: &mut World, key: impl Into<String>, value: Value, visibility: Visibility) {
    if world.resource::<FactRegistry>().is_none() {
        world.insert_resource(FactRegistry::default());
    }
    world.resource_mut::<FactRegistry>().expect("inserted above").set(key, value, visibility);
}

/// One observation handed to an agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Percept {
    pub key: String,
    pub value: Value,
    pub confidence: f64,
}

impl Percept {
    pub fn certain(key: impl Into<String>, value: impl Into<Value>) -> Self {
        Self { key: key.into(), value: value.into(), confidence: 1.0 }
    }
}

/// What `agent` observes right now.
///
/// With a position, the agent sees its own coordinates (`self.x`,
/// `self.y`) and, for every positioned entity within Chebyshev distance
/// `radius` (itself included), `entity.<id>.type` (when it has an
/// object type), `entity.<id>.x` and `entity.<id>.y`, ascending by entity
/// index. Visible facts follow, ascending by key. Confidence is always 1.
pub fn perceive(world: &World, agent: EntityId, radius: u64) -> Result<Vec<Percept>, EcsError> {
    if !world.is_live(agent) {
        return Err(EcsError::StaleEntity(agent));
    }
    let mut out = Vec::new();
    if let Ok(Some(&me)) = world.get::<Position>(agent) {
        out.push(Percept::certain("self.x", me.x));
        out.push(Percept::certain("self.y", me.y));
        let positions = world.store::<Position>()?;
        let objects = world.store::<ObjectComponent>().ok();
        let mut seen: Vec<(u32, Position)> =
            positions.iter().filter(|(_, p)| me.chebyshev(**p) <= radius).map(|(i, p)| (i, *p)).collect();
        seen.sort_unstable_by_key(|(i, _)| *i);
        for (index, pos) in seen {
            let Some(id) = world.entity_at(index) else { continue };
            if let Some(object) = objects.and_then(|s| s.get(index)) {
                out.push(Percept::certain(format!("entity.{id}.type"), object.object_type.clone()));
            }
            out.push(Percept::certain(format!("entity.{id}.x"), pos.x));
            out.push(Percept::certain(format!("entity.{id}.y"), pos.y));
        }
    }
    if let Some(facts) = world.resource::<FactRegistry>() {
        out.extend(facts.visible_to(agent).map(|(k, v)| Percept::certain(k, v.clone())));
    }
    Ok(out)
}

/// Registers the spatial components and resources and the `environment`
/// (action application) and `movement` (velocity integration) systems.
pub fn install(world: &mut World, after: &[&str]) -> Result<(), EcsError> {
    world.register::<Position>()?;
    world.register::<Velocity>()?;
    world.register_event_kind(COLLISION_EVENT);
    world.register_event_kind(INTERACTION_EVENT);
    if world.resource::<FactRegistry>().is_none() {
        world.insert_resource(FactRegistry::default());
    }
    world.insert_resource(ActionInbox::default());
    world.insert_resource(ActionLog::default());
    world.register_persistent_resource::<GridEnvironment>("grid");
    world.register_persistent_resource::<FactRegistry>("facts");
    world.register_persistent_resource::<ActionInbox>("actions");
    world.register_persistent_resource::<ActionLog>("outcomes");
    world.on_destroy(|world, id| {
        if let Some(facts) = world.resource_mut::<FactRegistry>() {
            facts.forget(id);
        }
        if let Some(log) = world.resource_mut::<ActionLog>() {
            log.last.remove(&id);
        }
    });
    world.register_system(
        SystemDescriptor::new(ENVIRONMENT_SYSTEM).writes([Position::KIND]).after(after.iter().copied()),
        |world| {
            let batch = std::mem::take(&mut world.resource_mut::<ActionInbox>().expect("installed").pending);
            apply_actions(world, batch)?;
            Ok(())
        },
    )?;
    world.register_system(
        SystemDescriptor::new(MOVEMENT_SYSTEM)
            .reads([Velocity::KIND])
            .writes([Position::KIND])
            .after([ENVIRONMENT_SYSTEM]),
        |world| {
            integrate_velocity(world)?;
            Ok(())
        },
    )
}

/// One Euler step for every entity with position and velocity. With a grid
/// installed, a step that would leave the grid or enter an obstacle is
/// skipped.
pub fn integrate_velocity(world: &mut World) -> Result<(), EcsError> {
    let grid = world.remove_resource::<GridEnvironment>();
    let result = world.store_pair_mut::<Position, Velocity>().map(|(positions, velocities)| {
        for (index, vel) in velocities.iter() {
            if let Some(pos) = positions.get_mut(index) {
                let next = pos.offset(vel.dx, vel.dy);
                if grid.as_ref().is_none_or(|g| g.is_passable(next)) {
                    *pos = next;
                }
            }
        }
    });
    if let Some(grid) = grid {
        world.insert_resource(grid);
    }
    result
}

#[cfg(test)]
mod tests;
