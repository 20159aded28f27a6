//! The tick executor: the only code that touches the world.
//!
//! It runs on its own thread and takes [`Job`]s from a queue, one at a
//! time, between ticks. In manual mode it ticks only when told to; in auto
//! mode it also ticks on a timer. After every tick it publishes the tick's
//! frames to all connections.

use std::collections::BTreeMap;
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use hecate_core::agent::{self, PerceptCache};
use hecate_core::environment::{self, ActionLog, Visibility};
use hecate_core::messaging::{self, Messaging};
use hecate_core::organization::{self, GroupComponent, GroupSpec};
use hecate_core::persistence::StorageBackend;
use hecate_core::scenario::{FactVisibility, TickMode};
use hecate_core::{EntityId, Simulation};
use serde_json::json;
use tokio::sync::{broadcast, oneshot};

use crate::command::{Command, CommandEnvelope, Ledger, Reply, SnapshotRequest, TickControl};
use crate::error::ApiError;
use crate::frames::{Batch, Frame};
use crate::views::{self, GroupView, SnapshotInfo};

/// Upper bound on one `step` request, so one call cannot stall the queue
/// indefinitely.
pub const MAX_STEPS: u64 = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    World,
    Agents,
    Agent(EntityId),
    Percepts(EntityId),
    Groups,
    Group(String),
    Snapshots,
    Metrics {
        timings: bool,
    },
    Control,
    /// Starts percept frames for an agent; fails for non-agents.
    Watch(EntityId),
    Unwatch(EntityId),
}

#[derive(Debug)]
pub enum Job {
    Command(CommandEnvelope, oneshot::Sender<Reply>),
    Query(Query, oneshot::Sender<Reply>),
    /// Stops the executor; answers with the final snapshot's locator.
    Shutdown(oneshot::Sender<Option<String>>),
}

pub struct ExecutorOptions {
    pub mode: TickMode,
    pub backend: Box<dyn StorageBackend>,
    /// Save a snapshot whenever the tick counter is a multiple of this.
    pub snapshot_every: Option<u64>,
    /// Save a snapshot on shutdown.
    pub final_snapshot: bool,
}

pub struct Executor {
    sim: Simulation,
    mode: TickMode,
    backend: Box<dyn StorageBackend>,
    snapshot_every: Option<u64>,
    final_snapshot: bool,
    ledger: Ledger,
    watched: BTreeMap<EntityId, usize>,
    frames: broadcast::Sender<Arc<Batch>>,
}

impl Executor {
    pub fn new(mut sim: Simulation, options: ExecutorOptions, frames: broadcast::Sender<Arc<Batch>>) -> Self {
        sim.world_mut().enable_journal();
        Self {
            sim,
            mode: options.mode,
            backend: options.backend,
            snapshot_every: options.snapshot_every.filter(|&n| n > 0),
            final_snapshot: options.final_snapshot,
            ledger: Ledger::default(),
            watched: BTreeMap::new(),
            frames,
        }
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    pub fn spawn(self, jobs: Receiver<Job>) -> std::io::Result<JoinHandle<()>> {
        std::thread::Builder::new().name("hecate-executor".into()).spawn(move || self.run(jobs))
    }

    fn run(mut self, jobs: Receiver<Job>) {
        let mut due: Option<Instant> = None;
        loop {
            let received = match self.mode {
                TickMode::Manual => {
                    due = None;
                    jobs.recv().map_err(|_| RecvTimeoutError::Disconnected)
                }
                TickMode::Auto { rate } => {
                    let period = Duration::from_secs_f64(1.0 / rate);
                    let at = *due.get_or_insert_with(|| Instant::now() + period);
                    jobs.recv_timeout(at.saturating_duration_since(Instant::now()))
                }
            };
            match received {
                Ok(Job::Shutdown(reply)) => {
                    let _ = reply.send(self.finish());
                    return;
                }
                Ok(job) => self.handle(job),
                Err(RecvTimeoutError::Timeout) => {
                    if let TickMode::Auto { rate } = self.mode {
                        let period = Duration::from_secs_f64(1.0 / rate);
                        // Missed deadlines are skipped rather than caught up.
                        due = due.map(|d| (d + period).max(Instant::now()));
                    }
                    if let Err(err) = self.advance(1) {
                        tracing::error!(code = %err.body.code, "auto tick failed, pausing: {}", err.body.message);
                        self.mode = TickMode::Manual;
                    }
                }
                Err(RecvTimeoutError::Disconnected) => {
                    self.finish();
                    return;
                }
            }
        }
    }

    fn handle(&mut self, job: Job) {
        match job {
            Job::Command(envelope, reply) => {
                let _ = reply.send(self.execute(envelope));
            }
            Job::Query(query, reply) => {
                let _ = reply.send(self.query(query));
            }
            Job::Shutdown(_) => unreachable!("handled by the run loop"),
        }
    }

    fn finish(&mut self) -> Option<String> {
        if !self.final_snapshot {
            return None;
        }
        match self.take_snapshot() {
            Ok(info) => {
                tracing::info!(locator = %info.locator, "final snapshot saved");
                Some(info.locator)
            }
            Err(err) => {
                tracing::error!("final snapshot failed: {}", err.body.message);
                None
            }
        }
    }

    /// Runs a command unless its id was seen before, in which case the
    /// recorded reply is returned.
    pub fn execute(&mut self, envelope: CommandEnvelope) -> Reply {
        if let Some(reply) = envelope.command_id.as_deref().and_then(|id| self.ledger.replay(id)) {
            tracing::debug!(command = envelope.command.name(), "replayed from ledger");
            return reply;
        }
        tracing::debug!(command = envelope.command.name(), id = ?envelope.command_id, "executing");
        let reply = self.apply(envelope.command).unwrap_or_else(Reply::from);
        if let Some(id) = envelope.command_id {
            self.ledger.record(id, reply.clone());
        }
        self.publish_untimed();
        reply
    }

    fn apply(&mut self, command: Command) -> Result<Reply, ApiError> {
        let world = self.sim.world_mut();
        Ok(match command {
            Command::Spawn(spec) => {
                let id = agent::spawn_agent(world, *spec)?;
                Reply::with_status(201, agent::agent_view(world, id)?)
            }
            Command::SetState { agent: id, target } => {
                agent::set_agent_state(world, id, target)?;
                Reply::ok(agent::agent_view(world, id)?)
            }
            Command::CreateGroup(config) => {
                let id = organization::create_group(
                    world,
                    GroupSpec {
                        name: config.name,
                        parent: config.parent,
                        policies: config.policies,
                        role_conflicts: config.role_conflicts,
                    },
                )?;
                Reply::with_status(201, self.group_view(id)?)
            }
            Command::JoinGroup { agent, group } => {
                let gid = organization::resolve_group(world, &group)?;
                organization::join_group(world, agent, gid)?;
                Reply::ok(self.group_view(gid)?)
            }
            Command::LeaveGroup { agent, group } => {
                let gid = organization::resolve_group(world, &group)?;
                organization::leave_group(world, agent, gid)?;
                Reply::ok(self.group_view(gid)?)
            }
            Command::Invite { agent, group } => {
                let gid = organization::resolve_group(world, &group)?;
                organization::invite(world, agent, gid)?;
                Reply::ok(self.group_view(gid)?)
            }
            Command::AssignRole { agent: id, role, group, capabilities } => {
                let gid = organization::resolve_group(world, &group)?;
                // The agent must exist before the group lookup can say anything useful.
                agent::agent_view(world, id)?;
                organization::assign_role(world, id, &role, gid, capabilities)?;
                Reply::ok(agent::agent_view(world, id)?)
            }
            Command::ActivateRole { agent: id, role } => {
                agent::agent_view(world, id)?;
                organization::activate_role(world, id, role)?;
                Reply::ok(agent::agent_view(world, id)?)
            }
            Command::SendMessage { sender, message } => {
                let receipt = messaging::send(world, sender, message)?;
                Reply::with_status(202, receipt)
            }
            Command::EnvAction(action) => {
                let tick = world.current_tick();
                environment::submit_action(world, action);
                Reply::with_status(202, json!({ "queued": true, "tick": tick }))
            }
            Command::SetFact { key, value, visibility } => {
                let visibility = match visibility {
                    FactVisibility::All => Visibility::All,
                    FactVisibility::Agents(names) => {
                        Visibility::Only(names.iter().map(|n| resolve_agent(&self.sim, n)).collect::<Result<_, _>>()?)
                    }
                };
                environment::set_fact(self.sim.world_mut(), key.clone(), value.clone(), visibility);
                Reply::ok(json!({ "key": key, "value": value }))
            }
            Command::Snapshot(SnapshotRequest::Take) => Reply::with_status(201, self.take_snapshot()?),
            Command::Snapshot(SnapshotRequest::Restore { locator }) => {
                self.restore(&locator)?;
                Reply::ok(views::world_view(self.sim.world()))
            }
            Command::TickControl(TickControl::Step { steps }) => {
                if let TickMode::Auto { .. } = self.mode {
                    return Err(ApiError::conflict("auto-mode", "manual ticks need manual mode; pause first"));
                }
                if steps > MAX_STEPS {
                    return Err(ApiError::new(422, "too-many-steps", format!("at most {MAX_STEPS} steps per request")));
                }
                self.advance(steps)?;
                Reply::ok(views::world_view(self.sim.world()))
            }
            Command::TickControl(TickControl::Run { rate }) => {
                if !(rate.is_finite() && rate > 0.0) {
                    return Err(ApiError::new(
                        422,
                        "invalid-rate",
                        "rate must be a positive number of ticks per second",
                    ));
                }
                self.mode = TickMode::Auto { rate };
                Reply::ok(json!({ "tickMode": self.mode }))
            }
            Command::TickControl(TickControl::Pause) => {
                self.mode = TickMode::Manual;
                Reply::ok(json!({ "tickMode": self.mode }))
            }
        })
    }

    pub fn query(&mut self, query: Query) -> Reply {
        self.answer(query).unwrap_or_else(Reply::from)
    }

    fn answer(&mut self, query: Query) -> Result<Reply, ApiError> {
        let world = self.sim.world();
        Ok(match query {
            Query::World => Reply::ok(views::world_view(world)),
            Query::Agents => Reply::ok(views::agent_views(world)),
            Query::Agent(id) => Reply::ok(agent::agent_view(world, id)?),
            Query::Percepts(id) => {
                agent::agent_view(world, id)?;
                let percepts = agent::current_percepts(world, id)?;
                Reply::ok(json!({ "agent": id, "tick": world.current_tick(), "percepts": percepts }))
            }
            Query::Groups => Reply::ok(views::group_views(world)),
            Query::Group(reference) => {
                let id = organization::resolve_group(world, &reference)?;
                Reply::ok(self.group_view(id)?)
            }
            Query::Snapshots => {
                let locators = self.backend.list().map_err(storage)?;
                Reply::ok(json!({ "snapshots": locators }))
            }
            Query::Metrics { timings } => Reply::ok(self.sim.metrics(timings)),
            Query::Control => Reply::ok(json!({ "tickMode": self.mode })),
            Query::Watch(id) => {
                agent::agent_view(world, id)?;
                *self.watched.entry(id).or_default() += 1;
                Reply::ok(json!({ "agent": id }))
            }
            Query::Unwatch(id) => {
                if let Some(n) = self.watched.get_mut(&id) {
                    *n -= 1;
                    if *n == 0 {
                        self.watched.remove(&id);
                    }
                }
                Reply::ok(json!({ "agent": id }))
            }
        })
    }

    fn group_view(&self, id: EntityId) -> Result<GroupView, ApiError> {
        let group = self
            .sim
            .world()
            .get::<GroupComponent>(id)?
            .ok_or_else(|| ApiError::not_found("unknown-group", format!("{id} is not a group")))?;
        Ok(GroupView::new(id, group))
    }

    /// Runs `steps` ticks, publishing each tick's frames.
    pub fn advance(&mut self, steps: u64) -> Result<(), ApiError> {
        for _ in 0..steps {
            let report = self.sim.tick().map_err(|e| ApiError::internal(e.to_string()))?;
            self.publish_tick(report.tick);
            let done = self.sim.world().current_tick();
            if self.snapshot_every.is_some_and(|n| done.is_multiple_of(n)) {
                if let Err(err) = self.take_snapshot() {
                    tracing::error!(tick = done, "periodic snapshot failed: {}", err.body.message);
                }
            }
        }
        Ok(())
    }

    fn take_snapshot(&mut self) -> Result<SnapshotInfo, ApiError> {
        let encoded = self.sim.snapshot()?;
        let locator = self.backend.save(&encoded).map_err(storage)?;
        tracing::debug!(%locator, "snapshot saved");
        Ok(SnapshotInfo { locator, tick: encoded.tick, checksum: encoded.checksum })
    }

    fn restore(&mut self, locator: &str) -> Result<(), ApiError> {
        let locator = if locator == "latest" {
            self.backend
                .latest()
                .map_err(storage)?
                .ok_or_else(|| ApiError::not_found("unknown-snapshot", "no snapshot has been saved"))?
        } else {
            locator.to_owned()
        };
        let bytes = self.backend.load(&locator).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound || e.kind() == std::io::ErrorKind::InvalidInput {
                ApiError::not_found("unknown-snapshot", format!("no snapshot `{locator}`"))
            } else {
                storage(e)
            }
        })?;
        let mut sim = Simulation::restore(&bytes)?;
        sim.world_mut().enable_journal();
        self.sim = sim;
        tracing::info!(%locator, tick = self.sim.world().current_tick(), "restored");
        Ok(())
    }

    fn publish_tick(&mut self, tick: u64) {
        let world = self.sim.world_mut();
        let mut frames: Vec<Frame> =
            world.take_journal().into_iter().map(|event| Frame::Event { tick, event }).collect();
        let world = self.sim.world();
        if let Some(m) = world.resource::<Messaging>() {
            frames.extend(m.last_deliveries().iter().map(|(agent, envelope)| Frame::Message {
                tick,
                agent: *agent,
                envelope: envelope.clone(),
            }));
        }
        if let Some(log) = world.resource::<ActionLog>() {
            frames.extend(log.recent.iter().map(|outcome| Frame::Outcome { tick, outcome: outcome.clone() }));
        }
        if let Some(cache) = world.resource::<PerceptCache>() {
            for &agent in self.watched.keys() {
                if let Some(percepts) = cache.get(agent) {
                    frames.push(Frame::Percept { tick, agent, percepts: percepts.to_vec() });
                }
            }
        }
        let _ = self.frames.send(Arc::new(Batch::new(frames, Some(Frame::Tick { tick }))));
    }

    /// Events dispatched by a command between ticks.
    fn publish_untimed(&mut self) {
        let world = self.sim.world_mut();
        let tick = world.current_tick();
        let frames: Vec<_> = world.take_journal().into_iter().map(|event| Frame::Event { tick, event }).collect();
        if !frames.is_empty() {
            let _ = self.frames.send(Arc::new(Batch::new(frames, None)));
        }
    }
}

fn storage(err: std::io::Error) -> ApiError {
    ApiError::new(500, "storage-error", err.to_string())
}

/// An agent by id or by name.
fn resolve_agent(sim: &Simulation, reference: &str) -> Result<EntityId, ApiError> {
    let found = match reference.parse::<EntityId>() {
        Ok(id) => agent::agent_view(sim.world(), id).ok().map(|_| id),
        Err(_) => sim.agent_named(reference),
    };
    found.ok_or_else(|| ApiError::not_found("unknown-agent", format!("no agent `{reference}`")))
}

#[cfg(test)]
mod tests {
    use hecate_core::agent::{AgentSpec, AgentState, Architecture};
    use hecate_core::persistence::MemoryBackend;
    use hecate_core::scenario::ScenarioConfig;

    use super::*;

    fn executor(sim: Simulation) -> (Executor, broadcast::Receiver<Arc<Batch>>) {
        let (tx, rx) = broadcast::channel(64);
        let options = ExecutorOptions {
            mode: TickMode::Manual,
            backend: Box::new(MemoryBackend::new()),
            snapshot_every: None,
            final_snapshot: false,
        };
        (Executor::new(sim, options, tx), rx)
    }

    fn cmd(id: Option<&str>, command: Command) -> CommandEnvelope {
        CommandEnvelope::new(id.map(str::to_owned), command)
    }

    fn step(n: u64) -> Command {
        Command::TickControl(TickControl::Step { steps: n })
    }

    #[test]
    fn duplicate_ids_do_not_execute_twice() {
        let (mut ex, _rx) = executor(Simulation::empty(0));
        let spawn = Command::Spawn(Box::new(AgentSpec::new("a", Architecture::Reactive)));
        let first = ex.execute(cmd(Some("c1"), spawn.clone()));
        let second = ex.execute(cmd(Some("c1"), spawn.clone()));
        assert_eq!(first.status, 201);
        assert_eq!((second.status, &second.body), (201, &first.body));
        assert!(second.replayed && !first.replayed);
        assert_eq!(views::agent_ids(ex.simulation().world()).len(), 1);
        // Without an id there is no deduplication.
        ex.execute(cmd(None, spawn.clone()));
        ex.execute(cmd(None, spawn));
        assert_eq!(views::agent_ids(ex.simulation().world()).len(), 3);
    }

    #[test]
    fn failures_are_recorded_too() {
        let (mut ex, _rx) = executor(Simulation::empty(0));
        let bogus = Command::SetState { agent: EntityId::new(7, 0), target: AgentState::Active };
        let first = ex.execute(cmd(Some("x"), bogus.clone()));
        assert_eq!(first.status, 404);
        assert!(ex.execute(cmd(Some("x"), bogus)).replayed);
    }

    #[test]
    fn each_tick_publishes_a_closed_batch() {
        let (mut ex, mut rx) = executor(Simulation::from_config(&ScenarioConfig::grid_bdi(), None).unwrap());
        ex.execute(cmd(None, step(2)));
        for expected in 0..2 {
            let batch = rx.try_recv().unwrap();
            assert_eq!(batch.frames.last(), Some(&Frame::Tick { tick: expected }));
        }
        assert!(rx.try_recv().is_err());
    }

    #[test]
    fn watched_agents_get_percepts() {
        let (mut ex, mut rx) = executor(Simulation::from_config(&ScenarioConfig::grid_bdi(), None).unwrap());
        let walker = ex.simulation().agent_named("walker").unwrap();
        assert_eq!(ex.query(Query::Watch(walker)).status, 200);
        ex.execute(cmd(None, step(1)));
        let batch = rx.try_recv().unwrap();
        let percepts: Vec<_> = batch
            .frames
            .iter()
            .filter_map(|f| match f {
                Frame::Percept { agent, percepts, .. } => Some((*agent, percepts.len())),
                _ => None,
            })
            .collect();
        assert_eq!(percepts.len(), 1);
        assert_eq!(percepts[0].0, walker);
        assert!(percepts[0].1 >= 2);
        ex.query(Query::Unwatch(walker));
        ex.execute(cmd(None, step(1)));
        assert!(!rx.try_recv().unwrap().frames.iter().any(|f| matches!(f, Frame::Percept { .. })));
    }

    #[test]
    fn watching_a_non_agent_fails() {
        let (mut ex, _rx) = executor(Simulation::empty(0));
        assert_eq!(ex.query(Query::Watch(EntityId::new(0, 0))).status, 404);
    }

    #[test]
    fn manual_steps_are_refused_in_auto_mode() {
        let (mut ex, _rx) = executor(Simulation::empty(0));
        let run = ex.execute(cmd(None, Command::TickControl(TickControl::Run { rate: 5.0 })));
        assert_eq!(run.body, json!({"tickMode": {"auto": {"rate": 5.0}}}));
        assert_eq!(ex.execute(cmd(None, step(1))).body["code"], "auto-mode");
        ex.execute(cmd(None, Command::TickControl(TickControl::Pause)));
        assert_eq!(ex.execute(cmd(None, step(1))).status, 200);
        let bad = ex.execute(cmd(None, Command::TickControl(TickControl::Run { rate: 0.0 })));
        assert_eq!(bad.body["code"], "invalid-rate");
    }

    #[test]
    fn snapshot_and_restore_through_the_backend() {
        let (mut ex, _rx) = executor(Simulation::from_config(&ScenarioConfig::grid_bdi(), None).unwrap());
        ex.execute(cmd(None, step(3)));
        let taken = ex.execute(cmd(None, Command::Snapshot(SnapshotRequest::Take)));
        assert_eq!(taken.status, 201);
        let before = ex.query(Query::Agents);
        ex.execute(cmd(None, step(4)));
        assert_ne!(ex.query(Query::Agents).body, before.body);
        let restored = ex.execute(cmd(None, Command::Snapshot(SnapshotRequest::Restore { locator: "latest".into() })));
        assert_eq!(restored.body["tick"], 3);
        assert_eq!(ex.query(Query::Agents).body, before.body);
        let missing = ex.execute(cmd(
            None,
            Command::Snapshot(SnapshotRequest::Restore { locator: "snap-9-000000000000.json".into() }),
        ));
        assert_eq!((missing.status, missing.body["code"].as_str()), (404, Some("unknown-snapshot")));
    }

    #[test]
    fn facts_accept_names_and_ids() {
        let (mut ex, _rx) = executor(Simulation::from_config(&ScenarioConfig::grid_bdi(), None).unwrap());
        let set = |who: &str| Command::SetFact {
            key: "k".into(),
            value: json!(1),
            visibility: FactVisibility::Agents(vec![who.into()]),
        };
        assert_eq!(ex.execute(cmd(None, set("walker"))).status, 200);
        assert_eq!(ex.execute(cmd(None, set("nobody"))).status, 404);
    }
}
