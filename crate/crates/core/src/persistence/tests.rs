use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::*;
use crate::agent::{self, AgentSpec, Architecture};
use crate::environment::{self, GridEnvironment, Position, Visibility};
use crate::messaging::{self, BrokerConfig, DeliverySemantics, OutgoingMessage, Target};
use crate::organization::{self, GroupSpec, PolicyKind};
use crate::runtime::Simulation;
use crate::scenario::ScenarioConfig;

fn restore(bytes: &[u8]) -> Simulation {
    Simulation::restore(bytes).unwrap()
}

fn bytes(sim: &Simulation) -> Vec<u8> {
    sim.snapshot().unwrap().bytes
}

/// A world with a bit of everything, driven by `seed`: grid, groups with
/// roles, agents of every architecture, facts, pending messages, queued
/// events and some ticks.
fn random_world(seed: u64) -> Simulation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ScenarioConfig {
        messaging: BrokerConfig {
            drop_probability: rng.random_range(0.0..0.5),
            redelivery_interval: rng.random_range(1..3),
        },
        ..ScenarioConfig::default()
    };
    let mut sim = Simulation::from_config(&config, Some(seed)).unwrap();
    let w = sim.world_mut();
    let (gw, gh) = (rng.random_range(3..8), rng.random_range(3..8));
    environment::set_grid(w, GridEnvironment::new(gw, gh).unwrap()).unwrap();
    let groups: Vec<_> = (0..rng.random_range(0..3))
        .map(|i| {
            organization::create_group(w, GroupSpec::new(format!("g{i}")).policy("cap", PolicyKind::MaxMembers(3)))
                .unwrap()
        })
        .collect();
    let archs = [Architecture::Reactive, Architecture::Cognitive, Architecture::Bdi];
    let mut agents = Vec::new();
    for i in 0..rng.random_range(0..6) {
        let mut spec = AgentSpec::new(format!("a{i}"), archs[rng.random_range(0..3)]);
        spec.position = Some(Position::new(rng.random_range(0..i64::from(gw)), rng.random_range(0..i64::from(gh))));
        spec.initial_beliefs.insert("n".into(), json!(rng.random_range(0..10)));
        spec.topics.push("t".into());
        spec.rules =
            serde_json::from_value(json!([{"trigger": "n >= 0", "action": {"move": {"dx": 1, "dy": 0}}}])).unwrap();
        if spec.architecture == Architecture::Bdi {
            spec = serde_json::from_value(json!({
                "name": spec.name, "architecture": "bdi", "position": spec.position,
                "goals": [{"id": "home", "condition": "self.x = 0 && self.y = 0"}],
                "plans": [{"id": "go", "achievesGoal": "home", "steps": [{"move-toward": {"x": 0, "y": 0}}], "repeat": true}]
            }))
            .unwrap();
        }
        let id = agent::spawn_agent(w, spec).unwrap();
        for &g in &groups {
            if rng.random_bool(0.5) && organization::join_group(w, id, g).is_ok() {
                organization::assign_role(w, id, "member", g, ["talk".to_string()]).unwrap();
            }
        }
        agents.push(id);
    }
    for i in 0..rng.random_range(0..4) {
        let vis = if rng.random_bool(0.5) {
            Visibility::All
        } else {
            Visibility::Only(agents.iter().copied().filter(|_| rng.random_bool(0.5)).collect())
        };
        environment::set_fact(w, format!("f{i}"), json!({"v": i, "s": "x"}), vis);
    }
    // Loose entities and a destroyed one exercise the allocator.
    let loose = w.create_entity().unwrap();
    if rng.random_bool(0.5) {
        w.destroy_entity(loose).unwrap();
    }
    let ticks = rng.random_range(0..4);
    sim.run(ticks).unwrap();
    let w = sim.world_mut();
    if let [first, .., last] = agents[..] {
        let semantics =
            if rng.random_bool(0.5) { DeliverySemantics::AtLeastOnce } else { DeliverySemantics::AtMostOnce };
        messaging::send(w, first, OutgoingMessage::new(Target::Agent(last), "inform").semantics(semantics)).unwrap();
        messaging::send(w, last, OutgoingMessage::new(Target::Topic("t".into()), "query").with("q", 1)).unwrap();
    }
    sim
}

#[test]
fn empty_world_snapshot() {
    let sim = Simulation::empty(0);
    let snap = decode(&bytes(&sim)).unwrap();
    assert_eq!(snap.format_version, FORMAT_VERSION);
    assert_eq!(snap.tick(), 0);
    assert!(snap.state.entities.is_empty());
    assert_eq!(snap.broker().unwrap()["queue"], json!([]));
}

#[test]
fn framing_is_checksum_then_body() {
    let enc = Simulation::empty(0).snapshot().unwrap();
    let text = String::from_utf8(enc.bytes.clone()).unwrap();
    assert!(text.starts_with(&format!(r#"{{"checksum":"{}","snapshot":{{"#, enc.checksum)));
    assert_eq!(enc.checksum.len(), 64);
    let value: serde_json::Value = serde_json::from_slice(&enc.bytes).unwrap();
    let body = to_canonical_vec(&value["snapshot"]);
    assert_eq!(hex::encode(Sha256::digest(&body)), enc.checksum);
}

#[test]
fn repeated_snapshots_are_identical() {
    let sim = Simulation::from_config(&ScenarioConfig::grid_bdi(), None).unwrap();
    assert_eq!(bytes(&sim), bytes(&sim));
    let mut sim = sim;
    sim.run(3).unwrap();
    assert_eq!(bytes(&sim), bytes(&sim));
}

#[test]
fn round_trip_over_random_worlds() {
    for seed in 0..200 {
        let sim = random_world(seed);
        let first = bytes(&sim);
        let restored = restore(&first);
        assert_eq!(bytes(&restored), first, "seed {seed}");
        // Restoring the same bytes twice yields the same world.
        assert_eq!(bytes(&restore(&first)), bytes(&restored));
    }
}

#[test]
fn restored_runs_continue_like_uninterrupted_ones() {
    for seed in [1, 7, 42] {
        let mut straight = random_world(seed);
        let mut split = random_world(seed);
        straight.run(20).unwrap();
        split.run(10).unwrap();
        let mut resumed = restore(&bytes(&split));
        resumed.run(10).unwrap();
        assert_eq!(bytes(&resumed), bytes(&straight), "seed {seed}");
    }
}

#[test]
fn fifty_plus_fifty_equals_one_hundred() {
    let config = ScenarioConfig::grid_bdi();
    let mut straight = Simulation::from_config(&config, None).unwrap();
    straight.run(100).unwrap();
    let mut first = Simulation::from_config(&config, None).unwrap();
    first.run(50).unwrap();
    let mut second = restore(&bytes(&first));
    assert_eq!(second.world().current_tick(), 50);
    second.run(50).unwrap();
    assert_eq!(bytes(&second), bytes(&straight));
}

#[test]
fn lossy_broker_resumes_identically() {
    let mut config = ScenarioConfig::grid_bdi();
    config.messaging.drop_probability = 0.4;
    let mut straight = Simulation::from_config(&config, Some(5)).unwrap();
    straight.run(30).unwrap();
    let mut half = Simulation::from_config(&config, Some(5)).unwrap();
    half.run(15).unwrap();
    let mut resumed = restore(&bytes(&half));
    resumed.run(15).unwrap();
    assert_eq!(bytes(&resumed), bytes(&straight));
    assert!(straight.metrics(false).dropped_attempts > 0);
}

#[test]
fn any_corrupt_byte_is_a_checksum_mismatch() {
    let good = bytes(&random_world(3));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let mut bad = good.clone();
        let i = rng.random_range(0..bad.len());
        bad[i] ^= 1 << rng.random_range(0..8);
        let err = decode(&bad).unwrap_err();
        assert_eq!(err.code(), "checksum-mismatch", "byte {i}");
    }
    assert_eq!(decode(&good[..good.len() - 1]).unwrap_err().code(), "checksum-mismatch");
    assert_eq!(decode(b"").unwrap_err().code(), "checksum-mismatch");
}

fn reframe(body: &serde_json::Value) -> Vec<u8> {
    let body = to_canonical_vec(body);
    let mut out = format!(r#"{{"checksum":"{}","snapshot":"#, hex::encode(Sha256::digest(&body))).into_bytes();
    out.extend_from_slice(&body);
    out.push(b'}');
    out
}

#[test]
fn other_format_versions_are_unsupported() {
    let good = bytes(&Simulation::empty(0));
    let mut value: serde_json::Value = serde_json::from_slice(&good).unwrap();
    value["snapshot"]["formatVersion"] = json!(2);
    let err = decode(&reframe(&value["snapshot"])).unwrap_err();
    assert!(matches!(err, PersistenceError::UnsupportedVersion(2)));
    assert_eq!(err.code(), "unsupported-version");
}

#[test]
fn valid_checksum_over_nonsense_is_malformed() {
    let err = decode(&reframe(&json!({"formatVersion": 1, "tick": "soon"}))).unwrap_err();
    assert_eq!(err.code(), "malformed-snapshot");
}

#[test]
fn restore_into_rejects_foreign_components() {
    let sim = random_world(9);
    let snap = bytes(&sim);
    // A bare world lacks the agent components the snapshot refers to.
    let mut bare = crate::ecs::World::with_seed(9);
    if !decode(&snap).unwrap().state.entities.iter().all(|e| e.components.is_empty()) {
        assert!(restore_into(&mut bare, &snap).is_err());
    }
}

#[test]
fn backends_do_not_change_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut file = FileBackend::new(dir.path()).unwrap();
    let mut memory = MemoryBackend::new();
    let mut sim = random_world(11);
    for _ in 0..3 {
        let enc = sim.snapshot().unwrap();
        let a = file.save(&enc).unwrap();
        let b = memory.save(&enc).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, snapshot_name(&enc));
        assert_eq!(file.load(&a).unwrap(), enc.bytes);
        assert_eq!(memory.load(&b).unwrap(), enc.bytes);
        sim.run(1).unwrap();
    }
    assert_eq!(file.list().unwrap(), memory.list().unwrap());
    assert_eq!(file.latest().unwrap(), memory.latest().unwrap());
}

#[test]
fn file_names_carry_tick_and_checksum_prefix() {
    let mut sim = Simulation::empty(0);
    sim.run(12).unwrap();
    let enc = sim.snapshot().unwrap();
    let name = snapshot_name(&enc);
    assert_eq!(name, format!("snap-12-{}.json", &enc.checksum[..12]));
    assert_eq!(tick_of(&name), Some(12));
}

#[test]
fn file_backend_survives_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let mut sim = Simulation::from_config(&ScenarioConfig::grid_bdi(), None).unwrap();
    sim.run(4).unwrap();
    let saved = FileBackend::new(dir.path()).unwrap().save(&sim.snapshot().unwrap()).unwrap();

    let reopened = FileBackend::new(dir.path()).unwrap();
    assert_eq!(reopened.latest().unwrap().as_deref(), Some(saved.as_str()));
    let restored = restore(&reopened.load(&saved).unwrap());
    assert_eq!(restored.world().current_tick(), 4);
    assert_eq!(bytes(&restored), bytes(&sim));
    assert!(reopened.load("../etc/passwd").is_err());
}

#[test]
fn snapshots_are_refused_mid_tick() {
    let mut w = crate::ecs::World::with_seed(0);
    w.insert_resource(None::<String>);
    w.register_system(crate::ecs::SystemDescriptor::new("probe"), |w| {
        let code = snapshot(w).unwrap_err().code();
        *w.resource_mut::<Option<String>>().unwrap() = Some(code.to_owned());
        Ok(())
    })
    .unwrap();
    w.tick().unwrap();
    assert_eq!(w.resource::<Option<String>>().unwrap().as_deref(), Some("restore-failed"));
}
