//! A fully installed world plus run bookkeeping.
//!
//! [`Simulation`] wires every module into one world with the standard
//! schedule
//!
//! ```text
//! lifecycle → perception → agent → environment → movement → planning → messaging
//! ```
//!
//! so that agents see the world at the start of a tick, act on it, and
//! their messages land in inboxes at the end of it (readable next tick).

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::agent::{self, AgentComponent, AgentError, GoalComponent, AGENT_SYSTEM, PLANNING_SYSTEM};
use crate::ecs::{EcsError, EntityId, TickReport, World, WorldConfig};
use crate::environment::{self, GridEnvironment, Visibility, MOVEMENT_SYSTEM};
use crate::messaging::{self, BrokerConfig, InMemoryBroker, Messaging};
use crate::organization::{self, GroupSpec, OrganizationError};
use crate::persistence::{self, EncodedSnapshot, PersistenceError};
use crate::scenario::{ConfigError, FactVisibility, ScenarioConfig};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Organization(#[from] OrganizationError),
    #[error(transparent)]
    Environment(#[from] environment::EnvironmentError),
    #[error(transparent)]
    Ecs(#[from] EcsError),
}

/// Installs every module with the standard schedule.
pub fn install_standard(world: &mut World, broker: BrokerConfig) -> Result<(), EcsError> {
    organization::install(world)?;
    agent::install(world, &[])?;
    environment::install(world, &[AGENT_SYSTEM])?;
    agent::install_planning(world, &[MOVEMENT_SYSTEM])?;
    messaging::install(world, Messaging::new(InMemoryBroker::new(broker)), &[PLANNING_SYSTEM])
}

#[derive(Debug, Default)]
struct Accumulator {
    ticks: u64,
    wall: Duration,
    per_system: BTreeMap<String, Duration>,
}

pub struct Simulation {
    world: World,
    acc: Accumulator,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation").field("world", &self.world).finish_non_exhaustive()
    }
}

impl Simulation {
    /// A world with every module installed and nothing in it.
    pub fn empty(seed: u64) -> Self {
        Self::with_broker(seed, BrokerConfig::default())
    }

    fn with_broker(seed: u64, broker: BrokerConfig) -> Self {
        let mut world = World::new(WorldConfig::seeded(seed));
        install_standard(&mut world, broker).expect("standard modules install into a fresh world");
        Self { world, acc: Accumulator::default() }
    }

    /// Builds the scenario: grid, groups, agents, then facts. `seed`
    /// overrides the scenario's own seed; without either the seed is 0.
    pub fn from_config(config: &ScenarioConfig, seed: Option<u64>) -> Result<Self, ScenarioError> {
        config.validate()?;
        let seed = seed.or(config.seed).unwrap_or(0);
        let mut sim = Self::with_broker(seed, config.messaging.clone());
        let world = &mut sim.world;

        if let Some(grid) = &config.environment.grid {
            let grid = GridEnvironment::new(grid.width, grid.height)?.with_obstacles(grid.obstacles.iter().copied())?;
            environment::set_grid(world, grid)?;
        }
        for group in &config.groups {
            organization::create_group(
                world,
                GroupSpec {
                    name: group.name.clone(),
                    parent: group.parent.clone(),
                    policies: group.policies.clone(),
                    role_conflicts: group.role_conflicts.clone(),
                },
            )?;
        }
        let mut spawned = BTreeMap::new();
        for spec in &config.agents {
            let id = agent::spawn_agent(world, spec.clone())?;
            spawned.insert(spec.name.clone(), id);
        }
        for fact in &config.environment.facts {
            let visibility = match &fact.visibility {
                FactVisibility::All => Visibility::All,
                FactVisibility::Agents(names) => Visibility::Only(names.iter().map(|n| spawned[n]).collect()),
            };
            environment::set_fact(world, fact.key.clone(), fact.value.clone(), visibility);
        }
        Ok(sim)
    }

    /// Rebuilds a simulation from snapshot bytes.
    pub fn restore(bytes: &[u8]) -> Result<Self, PersistenceError> {
        let snapshot = persistence::decode(bytes)?;
        let mut sim = Self::empty(snapshot.rng_seed());
        sim.world.apply_state(snapshot.state)?;
        Ok(sim)
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut World {
        &mut self.world
    }

    pub fn into_world(self) -> World {
        self.world
    }

    pub fn tick(&mut self) -> Result<TickReport, EcsError> {
        let start = Instant::now();
        let report = self.world.tick()?;
        self.acc.wall += start.elapsed();
        self.acc.ticks += 1;
        for run in &report.systems {
            *self.acc.per_system.entry(run.name.clone()).or_default() += run.elapsed;
        }
        Ok(report)
    }

    pub fn run(&mut self, ticks: u64) -> Result<(), EcsError> {
        for _ in 0..ticks {
            self.tick()?;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Result<EncodedSnapshot, PersistenceError> {
        persistence::snapshot_bytes(&self.world)
    }

    /// Metrics for the ticks run through this value. Wall-clock figures
    /// vary between runs, so they are only included on request.
    pub fn metrics(&self, with_timings: bool) -> RunMetrics {
        let stats = messaging::stats(&self.world).unwrap_or_default();
        let mut agents = Vec::new();
        if let (Ok(store), Ok(goals)) = (self.world.store::<AgentComponent>(), self.world.store::<GoalComponent>()) {
            for (index, agent) in store.iter() {
                let Some(id) = self.world.entity_at(index) else {
                    continue;
                };
                agents.push(AgentMetrics {
                    id,
                    name: agent.name.clone(),
                    goals_achieved: goals
                        .get(index)
                        .map(|g| g.achievements.iter().cloned().collect())
                        .unwrap_or_default(),
                });
            }
        }
        agents.sort_by_key(|a| a.id);
        let timings = with_timings.then(|| Timings {
            wall_time_ms: self.acc.wall.as_secs_f64() * 1e3,
            system_time_ms: self.acc.per_system.iter().map(|(k, v)| (k.clone(), v.as_secs_f64() * 1e3)).collect(),
        });
        RunMetrics {
            ticks: self.acc.ticks,
            final_tick: self.world.current_tick(),
            seed: self.world.seed(),
            entities: self.world.entity_count(),
            messages_sent: stats.sent,
            messages_delivered: stats.delivered,
            messages_lost: stats.lost,
            dropped_attempts: stats.dropped_attempts,
            goals_achieved: agents.iter().map(|a| a.goals_achieved.len()).sum(),
            agents,
            timings,
        }
    }

    pub fn agent_named(&self, name: &str) -> Option<EntityId> {
        agent::find_agent(&self.world, name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase")]
pub struct RunMetrics {
    /// Ticks executed by this run.
    pub ticks: u64,
    pub final_tick: u64,
    pub seed: u64,
    pub entities: usize,
    /// Per-recipient deliveries created by sends.
    pub messages_sent: u64,
    pub messages_delivered: u64,
    pub messages_lost: u64,
    pub dropped_attempts: u64,
    pub goals_achieved: usize,
    pub agents: Vec<AgentMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase")]
pub struct AgentMetrics {
    pub id: EntityId,
    pub name: String,
    pub goals_achieved: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase")]
pub struct Timings {
    pub wall_time_ms: f64,
    /// Cumulative time per system.
    pub system_time_ms: BTreeMap<String, f64>,
}
