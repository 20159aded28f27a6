use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::entity::{AllocatorState, EntityAllocator};
use super::event::{DispatchMode, EventRecord, Subscriber, ENTITY_CREATED, ENTITY_DESTROYED, MAX_DISPATCH_DEPTH};
use super::log::{Level, Logger};
use super::resources::{PersistHooks, Resources};
use super::schedule::{topological_order, SystemDescriptor};
use super::storage::{Component, ErasedStore, SparseSet};
use super::{BoxError, EcsError, EntityId};

pub type SystemBody = Box<dyn FnMut(&mut World) -> Result<(), BoxError> + Send>;
pub type DestroyHook = Arc<dyn Fn(&mut World, EntityId) + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldConfig {
    pub seed: u64,
    /// Records preallocated per component store.
    pub capacity_hint: usize,
    /// Hard cap on entity slots.
    pub max_entities: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self { seed: 0, capacity_hint: 10_000, max_entities: 1 << 22 }
    }
}

impl WorldConfig {
    pub fn seeded(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }
}

struct SystemEntry {
    desc: SystemDescriptor,
    body: SystemBody,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemRun {
    pub name: String,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TickReport {
    /// Tick number that just executed (the counter value before increment).
    pub tick: u64,
    pub events_dispatched: usize,
    /// One entry per system, in the order they ran.
    pub systems: Vec<SystemRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub index: u32,
    pub generation: u32,
    pub components: BTreeMap<String, Value>,
}

/// Plain-data capture of everything a world holds apart from code
/// (systems, subscribers, hooks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WorldState {
    pub tick: u64,
    pub rng_seed: u64,
    /// ChaCha word position, as a decimal string (it is a u128).
    pub rng_position: String,
    pub allocator: AllocatorState,
    pub entities: Vec<EntityRecord>,
    pub queued_events: Vec<EventRecord>,
    pub resources: BTreeMap<String, Value>,
}

pub struct World {
    config: WorldConfig,
    entities: EntityAllocator,
    stores: BTreeMap<String, Box<dyn ErasedStore>>,
    systems: Vec<SystemEntry>,
    schedule: Vec<usize>,
    in_tick: bool,
    event_kinds: BTreeSet<String>,
    subscribers: BTreeMap<String, Vec<Subscriber>>,
    queued: VecDeque<EventRecord>,
    dispatch_depth: u32,
    journal: Option<Vec<EventRecord>>,
    tick: u64,
    rng: ChaCha8Rng,
    resources: Resources,
    destroy_hooks: Vec<DestroyHook>,
    logger: Logger,
}

impl fmt::Debug for World {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("World")
            .field("tick", &self.tick)
            .field("entities", &self.entities.live_count())
            .field("kinds", &self.stores.keys().collect::<Vec<_>>())
            .field("schedule", &self.schedule_names())
            .finish_non_exhaustive()
    }
}

impl Default for World {
    fn default() -> Self {
        Self::new(WorldConfig::default())
    }
}

impl World {
    pub fn new(config: WorldConfig) -> Self {
        let event_kinds = [ENTITY_CREATED, ENTITY_DESTROYED].into_iter().map(String::from).collect();
        Self {
            entities: EntityAllocator::new(config.max_entities),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            stores: BTreeMap::new(),
            systems: Vec::new(),
            schedule: Vec::new(),
            in_tick: false,
            event_kinds,
            subscribers: BTreeMap::new(),
            queued: VecDeque::new(),
            dispatch_depth: 0,
            journal: None,
            tick: 0,
            resources: Resources::default(),
            destroy_hooks: Vec::new(),
            logger: Logger::default(),
        }
    }

    pub fn with_seed(seed: u64) -> Self {
        Self::new(WorldConfig::seeded(seed))
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn current_tick(&self) -> u64 {
        self.tick
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    /// Deterministic generator seeded from the world seed. Its position is
    /// part of the captured state.
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    // ---- entities ----------------------------------------------------------

    pub fn create_entity(&mut self) -> Result<EntityId, EcsError> {
        let id = self.entities.allocate().ok_or(EcsError::CapacityExhausted { cap: self.config.max_entities })?;
        self.log(Level::Debug, ENTITY_CREATED, &[("entity", &id)]);
        self.emit_event(EventRecord::new(ENTITY_CREATED).with_source(id), DispatchMode::Queued)?;
        Ok(id)
    }

    pub fn destroy_entity(&mut self, id: EntityId) -> Result<(), EcsError> {
        self.ensure_live(id)?;
        let hooks = self.destroy_hooks.clone();
        for hook in hooks {
            hook(self, id);
        }
        for store in self.stores.values_mut() {
            store.remove(id.index);
        }
        self.entities.free(id);
        self.log(Level::Debug, ENTITY_DESTROYED, &[("entity", &id)]);
        self.emit_event(EventRecord::new(ENTITY_DESTROYED).with_source(id), DispatchMode::Queued)
    }

    /// Runs before an entity's components are removed.
    pub fn on_destroy(&mut self, hook: impl Fn(&mut World, EntityId) + Send + Sync + 'static) {
        self.destroy_hooks.push(Arc::new(hook));
    }

    pub fn is_live(&self, id: EntityId) -> bool {
        self.entities.is_live(id)
    }

    pub fn entity_count(&self) -> usize {
        self.entities.live_count()
    }

    /// Live entities in ascending index order.
    pub fn live_entities(&self) -> Vec<EntityId> {
        self.entities.iter_live().collect()
    }

    /// Live handle at `index`, if the slot is occupied.
    pub fn entity_at(&self, index: u32) -> Option<EntityId> {
        self.entities.live_at(index)
    }

    fn ensure_live(&self, id: EntityId) -> Result<(), EcsError> {
        if self.entities.is_live(id) {
            Ok(())
        } else {
            Err(EcsError::StaleEntity(id))
        }
    }

    // ---- component kinds ---------------------------------------------------

    pub fn register<T: Component>(&mut self) -> Result<(), EcsError> {
        self.add_store(T::KIND, Box::new(SparseSet::<T>::with_capacity(self.config.capacity_hint)))
    }

    /// Registers a kind holding untyped JSON records.
    pub fn register_kind(&mut self, kind: &str) -> Result<(), EcsError> {
        self.add_store(kind, Box::new(SparseSet::<Value>::with_capacity(self.config.capacity_hint)))
    }

    fn add_store(&mut self, kind: &str, store: Box<dyn ErasedStore>) -> Result<(), EcsError> {
        if self.stores.contains_key(kind) {
            return Err(EcsError::DuplicateComponentKind(kind.to_owned()));
        }
        self.stores.insert(kind.to_owned(), store);
        Ok(())
    }

    pub fn is_registered(&self, kind: &str) -> bool {
        self.stores.contains_key(kind)
    }

    pub fn kinds(&self) -> impl Iterator<Item = &str> {
        self.stores.keys().map(String::as_str)
    }

    fn erased(&self, kind: &str) -> Result<&dyn ErasedStore, EcsError> {
        self.stores.get(kind).map(|s| s.as_ref()).ok_or_else(|| EcsError::UnknownComponentKind(kind.to_owned()))
    }

    fn erased_mut(&mut self, kind: &str) -> Result<&mut Box<dyn ErasedStore>, EcsError> {
        self.stores.get_mut(kind).ok_or_else(|| EcsError::UnknownComponentKind(kind.to_owned()))
    }

    pub fn store<T: Component>(&self) -> Result<&SparseSet<T>, EcsError> {
        self.erased(T::KIND)?.as_any().downcast_ref().ok_or_else(|| EcsError::ComponentTypeMismatch(T::KIND.to_owned()))
    }

    pub fn store_mut<T: Component>(&mut self) -> Result<&mut SparseSet<T>, EcsError> {
        self.erased_mut(T::KIND)?
            .as_any_mut()
            .downcast_mut()
            .ok_or_else(|| EcsError::ComponentTypeMismatch(T::KIND.to_owned()))
    }

    /// Mutable access to two distinct stores at once.
    pub fn store_pair_mut<A: Component, B: Component>(
        &mut self,
    ) -> Result<(&mut SparseSet<A>, &mut SparseSet<B>), EcsError> {
        assert_ne!(A::KIND, B::KIND, "store_pair_mut needs two distinct kinds");
        let mut a = None;
        let mut b = None;
        for (kind, store) in self.stores.iter_mut() {
            if kind == A::KIND {
                a = Some(store);
            } else if kind == B::KIND {
                b = Some(store);
            }
        }
        let a = a.ok_or_else(|| EcsError::UnknownComponentKind(A::KIND.to_owned()))?;
        let b = b.ok_or_else(|| EcsError::UnknownComponentKind(B::KIND.to_owned()))?;
        let a = a.as_any_mut().downcast_mut().ok_or_else(|| EcsError::ComponentTypeMismatch(A::KIND.to_owned()))?;
        let b = b.as_any_mut().downcast_mut().ok_or_else(|| EcsError::ComponentTypeMismatch(B::KIND.to_owned()))?;
        Ok((a, b))
    }

    /// Number of records in a kind's store.
    pub fn store_len(&self, kind: &str) -> Result<usize, EcsError> {
        Ok(self.erased(kind)?.len())
    }

    // ---- typed component access -------------------------------------------

    /// Attaches `value`, replacing any existing record of the same kind.
    pub fn insert<T: Component>(&mut self, id: EntityId, value: T) -> Result<(), EcsError> {
        self.ensure_live(id)?;
        self.store_mut::<T>()?.insert(id.index, value);
        Ok(())
    }

    pub fn get<T: Component>(&self, id: EntityId) -> Result<Option<&T>, EcsError> {
        self.ensure_live(id)?;
        Ok(self.store::<T>()?.get(id.index))
    }

    pub fn get_mut<T: Component>(&mut self, id: EntityId) -> Result<Option<&mut T>, EcsError> {
        self.ensure_live(id)?;
        Ok(self.store_mut::<T>()?.get_mut(id.index))
    }

    pub fn remove<T: Component>(&mut self, id: EntityId) -> Result<Option<T>, EcsError> {
        self.ensure_live(id)?;
        Ok(self.store_mut::<T>()?.remove(id.index))
    }

    // ---- untyped component access -----------------------------------------

    /// Attaches a record given as JSON; typed kinds decode it first.
    pub fn add_component(&mut self, id: EntityId, kind: &str, data: Value) -> Result<(), EcsError> {
        self.ensure_live(id)?;
        self.erased_mut(kind)?
            .insert_value(id.index, data)
            .map_err(|source| EcsError::ComponentCodec { kind: kind.to_owned(), source })
    }

    pub fn get_component(&self, id: EntityId, kind: &str) -> Result<Option<Value>, EcsError> {
        self.ensure_live(id)?;
        self.erased(kind)?
            .to_value(id.index)
            .transpose()
            .map_err(|source| EcsError::ComponentCodec { kind: kind.to_owned(), source })
    }

    /// Returns whether a record was removed.
    pub fn remove_component(&mut self, id: EntityId, kind: &str) -> Result<bool, EcsError> {
        self.ensure_live(id)?;
        Ok(self.erased_mut(kind)?.remove(id.index))
    }

    pub fn has(&self, id: EntityId, kind: &str) -> Result<bool, EcsError> {
        self.ensure_live(id)?;
        Ok(self.erased(kind)?.contains(id.index))
    }

    /// Kinds attached to a live entity, sorted.
    pub fn component_kinds_of(&self, id: EntityId) -> Result<Vec<String>, EcsError> {
        self.ensure_live(id)?;
        Ok(self.stores.iter().filter(|(_, s)| s.contains(id.index)).map(|(k, _)| k.clone()).collect())
    }

    // ---- queries -----------------------------------------------------------

    /// Live entities holding every kind in `required`, ascending by index.
    /// An empty requirement matches every live entity.
    pub fn query(&self, required: &[&str]) -> Result<Vec<EntityId>, EcsError> {
        let stores = required.iter().map(|k| self.erased(k)).collect::<Result<Vec<_>, _>>()?;
        let Some(smallest) = stores.iter().min_by_key(|s| s.len()) else {
            return Ok(self.live_entities());
        };
        let mut indices: Vec<u32> =
            smallest.owners().iter().copied().filter(|&i| stores.iter().all(|s| s.contains(i))).collect();
        indices.sort_unstable();
        Ok(indices.into_iter().filter_map(|i| self.entities.live_at(i)).collect())
    }

    // ---- systems -----------------------------------------------------------

    pub fn register_system(
        &mut self,
        mut desc: SystemDescriptor,
        body: impl FnMut(&mut World) -> Result<(), BoxError> + Send + 'static,
    ) -> Result<(), EcsError> {
        if self.in_tick {
            return Err(EcsError::RegistrationDuringTick);
        }
        if self.systems.iter().any(|s| s.desc.name == desc.name) {
            return Err(EcsError::DuplicateSystem(desc.name));
        }
        for dep in &desc.dependencies {
            if *dep != desc.name && !self.systems.iter().any(|s| s.desc.name == *dep) {
                return Err(EcsError::UnknownDependency { system: desc.name.clone(), dependency: dep.clone() });
            }
        }
        for kind in desc.reads.iter().chain(&desc.writes) {
            self.erased(kind)?;
        }
        desc.order = self.systems.len();
        let mut descriptors: Vec<SystemDescriptor> = self.systems.iter().map(|s| s.desc.clone()).collect();
        descriptors.push(desc.clone());
        let schedule = topological_order(&descriptors).map_err(EcsError::CycleDetected)?;
        self.systems.push(SystemEntry { desc, body: Box::new(body) });
        self.schedule = schedule;
        Ok(())
    }

    pub fn schedule_names(&self) -> Vec<&str> {
        self.schedule.iter().map(|&i| self.systems[i].desc.name.as_str()).collect()
    }

    pub fn system_descriptors(&self) -> impl Iterator<Item = &SystemDescriptor> {
        self.schedule.iter().map(|&i| &self.systems[i].desc)
    }

    // ---- events ------------------------------------------------------------

    pub fn register_event_kind(&mut self, kind: &str) {
        self.event_kinds.insert(kind.to_owned());
    }

    pub fn is_event_kind(&self, kind: &str) -> bool {
        self.event_kinds.contains(kind)
    }

    /// Subscribes to `kind`, registering the kind if needed.
    pub fn subscribe(
        &mut self,
        kind: &str,
        handler: impl Fn(&mut World, &EventRecord) -> Result<(), BoxError> + Send + Sync + 'static,
    ) {
        self.register_event_kind(kind);
        self.subscribers.entry(kind.to_owned()).or_default().push(Arc::new(handler));
    }

    /// Emits an event stamped with the current tick.
    ///
    /// Immediate events reach every subscriber before this returns. Queued
    /// events are delivered when the next tick starts, never during the
    /// tick that emitted them.
    pub fn emit_event(&mut self, mut event: EventRecord, mode: DispatchMode) -> Result<(), EcsError> {
        if !self.event_kinds.contains(&event.event_kind) {
            return Err(EcsError::UnknownEventKind(event.event_kind));
        }
        event.tick_emitted = self.tick;
        match mode {
            DispatchMode::Immediate => self.dispatch(event),
            DispatchMode::Queued => {
                self.queued.push_back(event);
                Ok(())
            }
        }
    }

    fn dispatch(&mut self, event: EventRecord) -> Result<(), EcsError> {
        if self.dispatch_depth >= MAX_DISPATCH_DEPTH {
            return Err(EcsError::DispatchDepthExceeded { depth: MAX_DISPATCH_DEPTH });
        }
        let handlers = self.subscribers.get(&event.event_kind).cloned().unwrap_or_default();
        if let Some(journal) = &mut self.journal {
            journal.push(event.clone());
        }
        self.dispatch_depth += 1;
        let result = handlers.iter().try_for_each(|h| h(self, &event));
        self.dispatch_depth -= 1;
        result.map_err(|e| {
            EcsError::from_boxed(e, |source| EcsError::SubscriberFailed { kind: event.event_kind.clone(), source })
        })
    }

    pub fn queued_events(&self) -> impl Iterator<Item = &EventRecord> {
        self.queued.iter()
    }

    /// Starts recording every dispatched event.
    pub fn enable_journal(&mut self) {
        self.journal.get_or_insert_with(Vec::new);
    }

    /// Events dispatched since the last call.
    pub fn take_journal(&mut self) -> Vec<EventRecord> {
        self.journal.as_mut().map(std::mem::take).unwrap_or_default()
    }

    // ---- tick loop ---------------------------------------------------------

    /// One update: deliver queued events, run the schedule, advance the
    /// counter. A failing system aborts the tick without advancing it.
    pub fn tick(&mut self) -> Result<TickReport, EcsError> {
        if self.in_tick {
            return Err(EcsError::ReentrantTick);
        }
        let tick = self.tick;

        let due = self.queued.iter().take_while(|e| e.tick_emitted < tick).count();
        let mut batch: VecDeque<EventRecord> = self.queued.drain(..due).collect();
        let mut events_dispatched = 0;
        while let Some(event) = batch.pop_front() {
            if let Err(err) = self.dispatch(event) {
                for rest in batch.into_iter().rev() {
                    self.queued.push_front(rest);
                }
                return Err(err);
            }
            events_dispatched += 1;
        }

        self.in_tick = true;
        let mut systems = std::mem::take(&mut self.systems);
        let mut runs = Vec::with_capacity(self.schedule.len());
        let mut failure = None;
        for &i in &self.schedule.clone() {
            let entry = &mut systems[i];
            let start = Instant::now();
            let result = (entry.body)(self);
            let elapsed = start.elapsed();
            if let Err(source) = result {
                failure = Some(EcsError::SystemFailed { system: entry.desc.name.clone(), source });
                break;
            }
            self.log(Level::Trace, "system-run", &[("system", &entry.desc.name), ("micros", &elapsed.as_micros())]);
            runs.push(SystemRun { name: entry.desc.name.clone(), elapsed });
        }
        self.systems = systems;
        self.in_tick = false;
        if let Some(err) = failure {
            self.log(Level::Error, "tick-failed", &[("error", &err)]);
            return Err(err);
        }

        self.tick += 1;
        Ok(TickReport { tick, events_dispatched, systems: runs })
    }

    pub fn is_ticking(&self) -> bool {
        self.in_tick
    }

    // ---- resources ---------------------------------------------------------

    pub fn insert_resource<T: Send + 'static>(&mut self, value: T) -> Option<T> {
        self.resources.insert(value)
    }

    pub fn resource<T: 'static>(&self) -> Option<&T> {
        self.resources.get()
    }

    pub fn resource_mut<T: 'static>(&mut self) -> Option<&mut T> {
        self.resources.get_mut()
    }

    pub fn remove_resource<T: 'static>(&mut self) -> Option<T> {
        self.resources.remove()
    }

    /// Includes resource `T` in captured state under `name`.
    pub fn register_persistent_resource<T>(&mut self, name: &str)
    where
        T: Serialize + DeserializeOwned + Send + 'static,
    {
        self.resources.register_persistent::<T>(name);
    }

    pub(crate) fn register_persistent_hooks(&mut self, name: &str, hooks: PersistHooks) {
        self.resources.register_hooks(name, hooks);
    }

    // ---- logging -----------------------------------------------------------

    pub fn logger_mut(&mut self) -> &mut Logger {
        &mut self.logger
    }

    pub fn log(&mut self, level: Level, event: &str, fields: &[(&str, &dyn fmt::Display)]) {
        if self.logger.enabled(level) {
            self.logger.log(self.tick, level, event, fields);
        }
    }

    // ---- state capture -----------------------------------------------------

    pub fn capture(&self) -> Result<WorldState, EcsError> {
        let mut entities = Vec::with_capacity(self.entity_count());
        for id in self.entities.iter_live() {
            let mut components = BTreeMap::new();
            for (kind, store) in &self.stores {
                if let Some(value) = store.to_value(id.index) {
                    let value = value.map_err(|source| EcsError::ComponentCodec { kind: kind.clone(), source })?;
                    components.insert(kind.clone(), value);
                }
            }
            entities.push(EntityRecord { index: id.index, generation: id.generation, components });
        }

        let mut resources = BTreeMap::new();
        for (name, hooks) in self.resources.persistent() {
            if let Some(value) = (hooks.save)(&self.resources) {
                let value = value.map_err(|source| EcsError::ResourceCodec { name: name.clone(), source })?;
                resources.insert(name.clone(), value);
            }
        }

        Ok(WorldState {
            tick: self.tick,
            rng_seed: self.config.seed,
            rng_position: self.rng.get_word_pos().to_string(),
            allocator: self.entities.state(),
            entities,
            queued_events: self.queued.iter().cloned().collect(),
            resources,
        })
    }

    /// Replaces all data with `state`. Kinds and persistent resources named
    /// in `state` must already be registered.
    pub fn apply_state(&mut self, state: WorldState) -> Result<(), EcsError> {
        let position: u128 = state
            .rng_position
            .parse()
            .map_err(|_| EcsError::MalformedState(format!("rng position `{}`", state.rng_position)))?;
        if state.allocator.generations.len() != state.allocator.alive.len() {
            return Err(EcsError::MalformedState("allocator arrays differ in length".into()));
        }
        for record in &state.entities {
            for kind in record.components.keys() {
                self.erased(kind)?;
            }
            let slot = record.index as usize;
            let alive = state.allocator.alive.get(slot).copied().unwrap_or(false);
            if !alive || state.allocator.generations[slot] != record.generation {
                return Err(EcsError::MalformedState(format!(
                    "entity {}v{} is not live in the allocator",
                    record.index, record.generation
                )));
            }
        }
        for name in state.resources.keys() {
            if self.resources.hooks(name).is_none() {
                return Err(EcsError::UnknownResource(name.clone()));
            }
        }

        for store in self.stores.values_mut() {
            store.clear();
        }
        self.entities.restore(state.allocator);
        for record in state.entities {
            for (kind, value) in record.components {
                self.erased_mut(&kind)?
                    .insert_value(record.index, value)
                    .map_err(|source| EcsError::ComponentCodec { kind, source })?;
            }
        }
        for (name, value) in state.resources {
            let hooks = self.resources.hooks(&name).expect("checked above");
            (hooks.load)(&mut self.resources, value).map_err(|source| EcsError::ResourceCodec { name, source })?;
        }
        self.queued = state.queued_events.into();
        self.tick = state.tick;
        self.config.seed = state.rng_seed;
        self.rng = ChaCha8Rng::seed_from_u64(state.rng_seed);
        self.rng.set_word_pos(position);
        Ok(())
    }

    /// Checks the structural invariants: every store is internally linked,
    /// and every stored record belongs to a live entity.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (kind, store) in &self.stores {
            if !store.is_consistent() {
                return Err(format!("store `{kind}` has broken sparse/dense links"));
            }
            if let Some(&dead) = store.owners().iter().find(|&&i| self.entities.live_at(i).is_none()) {
                return Err(format!("store `{kind}` holds a record for dead slot {dead}"));
            }
        }
        for event in &self.queued {
            if event.tick_emitted > self.tick {
                return Err(format!("queued event stamped in the future ({})", event.tick_emitted));
            }
        }
        Ok(())
    }
}
