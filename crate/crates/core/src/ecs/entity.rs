use std::fmt;
use std::str::FromStr;

use schemars::JsonSchema;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Handle to an entity slot.
///
/// A handle is live only while its generation matches the slot's current
/// generation. Destroying an entity bumps the slot generation, so handles
/// held across a destroy never alias whatever reuses the slot.
///
/// The text form is `<index>v<generation>`, e.g. `3v0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId {
    pub index: u32,
    pub generation: u32,
}

impl EntityId {
    pub const fn new(index: u32, generation: u32) -> Self {
        Self { index, generation }
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}v{}", self.index, self.generation)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed entity id `{0}`, expected <index>v<generation>")]
pub struct ParseEntityIdError(String);

impl FromStr for EntityId {
    type Err = ParseEntityIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseEntityIdError(s.to_owned());
        let (index, generation) = s.split_once('v').ok_or_else(err)?;
        Ok(Self { index: index.parse().map_err(|_| err())?, generation: generation.parse().map_err(|_| err())? })
    }
}

impl Serialize for EntityId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EntityId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl JsonSchema for EntityId {
    fn schema_name() -> std::borrow::Cow<'static, str> {
        "EntityId".into()
    }

    fn json_schema(_: &mut schemars::SchemaGenerator) -> schemars::Schema {
        schemars::json_schema!({
            "type": "string",
            "pattern": "^[0-9]+v[0-9]+$"
        })
    }
}

/// Serializable allocator state, captured in snapshots so that id
/// allocation continues identically after a restore.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AllocatorState {
    pub generations: Vec<u32>,
    pub alive: Vec<bool>,
    pub free: Vec<u32>,
}

/// Generational slot allocator. Freed slots are reused last-in first-out.
#[derive(Debug, Clone)]
pub(crate) struct EntityAllocator {
    generations: Vec<u32>,
    alive: Vec<bool>,
    free: Vec<u32>,
    live_count: usize,
    cap: usize,
}

impl EntityAllocator {
    pub(crate) fn new(cap: usize) -> Self {
        Self { generations: Vec::new(), alive: Vec::new(), free: Vec::new(), live_count: 0, cap }
    }

    pub(crate) fn allocate(&mut self) -> Option<EntityId> {
        if let Some(index) = self.free.pop() {
            let slot = index as usize;
            self.alive[slot] = true;
            self.live_count += 1;
            return Some(EntityId::new(index, self.generations[slot]));
        }
        if self.generations.len() >= self.cap {
            return None;
        }
        let index = u32::try_from(self.generations.len()).ok()?;
        self.generations.push(0);
        self.alive.push(true);
        self.live_count += 1;
        Some(EntityId::new(index, 0))
    }

    /// Returns false if `id` was not live.
    pub(crate) fn free(&mut self, id: EntityId) -> bool {
        if !self.is_live(id) {
            return false;
        }
        let slot = id.index as usize;
        self.alive[slot] = false;
        self.generations[slot] = self.generations[slot].wrapping_add(1);
        self.free.push(id.index);
        self.live_count -= 1;
        true
    }

    pub(crate) fn is_live(&self, id: EntityId) -> bool {
        let slot = id.index as usize;
        slot < self.generations.len() && self.alive[slot] && self.generations[slot] == id.generation
    }

    /// Live handle currently occupying `index`, if any.
    pub(crate) fn live_at(&self, index: u32) -> Option<EntityId> {
        let slot = index as usize;
        (slot < self.alive.len() && self.alive[slot]).then(|| EntityId::new(index, self.generations[slot]))
    }

    pub(crate) fn live_count(&self) -> usize {
        self.live_count
    }

    pub(crate) fn iter_live(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.alive
            .iter()
            .enumerate()
            .filter(|(_, alive)| **alive)
            .map(|(i, _)| EntityId::new(i as u32, self.generations[i]))
    }

    pub(crate) fn state(&self) -> AllocatorState {
        AllocatorState { generations: self.generations.clone(), alive: self.alive.clone(), free: self.free.clone() }
    }

    pub(crate) fn restore(&mut self, state: AllocatorState) {
        self.live_count = state.alive.iter().filter(|a| **a).count();
        self.generations = state.generations;
        self.alive = state.alive;
        self.free = state.free;
    }
}
