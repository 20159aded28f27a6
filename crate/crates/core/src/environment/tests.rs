use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::*;
use crate::agent::{self, AgentSpec, Architecture};
use crate::ecs::EventRecord;
use crate::messaging::{MessageComponent, OutgoingMessage, Target};
use crate::runtime::Simulation;

fn grid_world(w: u32, h: u32) -> Simulation {
    let mut sim = Simulation::empty(3);
    set_grid(sim.world_mut(), GridEnvironment::new(w, h).unwrap()).unwrap();
    sim
}

fn at(x: i64, y: i64) -> Position {
    Position { x, y }
}

fn put(world: &mut World, x: i64, y: i64) -> EntityId {
    let id = world.create_entity().unwrap();
    place(world, id, at(x, y)).unwrap();
    id
}

fn pos(world: &World, id: EntityId) -> Position {
    *world.get::<Position>(id).unwrap().unwrap()
}

fn mv(issuer: EntityId, dx: i64, dy: i64) -> ActionDescriptor {
    ActionDescriptor::new(issuer, ActionKind::Move { dx, dy })
}

/// Entity ids mentioned by spatial percepts.
fn seen_ids(percepts: &[Percept]) -> BTreeSet<String> {
    percepts
        .iter()
        .filter_map(|p| p.key.strip_prefix("entity."))
        .filter_map(|rest| rest.split_once('.').map(|(id, _)| id.to_owned()))
        .collect()
}

fn collisions(journal: &[EventRecord]) -> Vec<&EventRecord> {
    journal.iter().filter(|e| e.event_kind == COLLISION_EVENT).collect()
}

#[test]
fn distances() {
    let (a, b) = (at(0, 0), at(3, -2));
    assert_eq!(a.chebyshev(b), 3);
    assert_eq!(a.manhattan(b), 5);
    assert_eq!(b.chebyshev(a), 3);
}

#[test]
fn empty_grid_is_an_error() {
    assert_eq!(GridEnvironment::new(0, 4).unwrap_err().code(), "invalid-grid");
    assert!(GridEnvironment::new(2, 2).unwrap().with_obstacles([at(2, 0)]).is_err());
}

#[test]
fn step_east() {
    let mut sim = grid_world(5, 5);
    let w = sim.world_mut();
    let e = put(w, 0, 0);
    let out = apply_action(w, mv(e, 1, 0)).unwrap();
    assert_eq!(out.status, OutcomeStatus::Applied);
    assert_eq!(pos(w, e), at(1, 0));
}

#[test]
fn off_the_edge_is_blocked() {
    let mut sim = grid_world(5, 5);
    let w = sim.world_mut();
    let e = put(w, 0, 0);
    let out = apply_action(w, mv(e, -1, 0)).unwrap();
    assert_eq!((out.status, out.reason.as_deref()), (OutcomeStatus::Blocked, Some("out-of-bounds")));
    assert_eq!(pos(w, e), at(0, 0));
}

#[test]
fn obstacles_block() {
    let mut sim = grid_world(5, 5);
    let w = sim.world_mut();
    add_obstacle(w, at(1, 0)).unwrap();
    let e = put(w, 0, 0);
    let out = apply_action(w, mv(e, 1, 0)).unwrap();
    assert_eq!((out.status, out.reason.as_deref()), (OutcomeStatus::Blocked, Some("obstacle")));
    assert_eq!(pos(w, e), at(0, 0));
    assert!(matches!(place(w, e, at(1, 0)), Err(PlaceError::Environment(EnvironmentError::Obstacle(_)))));
    assert_eq!(add_obstacle(w, at(0, 0)).unwrap_err().code(), "occupied");
}

#[test]
fn malformed_and_inadmissible_actions_are_rejected() {
    let mut sim = grid_world(5, 5);
    let w = sim.world_mut();
    let e = put(w, 2, 2);
    let loose = w.create_entity().unwrap();
    let reason = |w: &mut World, a| apply_action(w, a).unwrap().reason.unwrap();
    assert_eq!(reason(w, mv(e, 1, 1)), "not-a-unit-step");
    assert_eq!(reason(w, mv(e, 0, 0)), "not-a-unit-step");
    assert_eq!(reason(w, mv(loose, 1, 0)), "no-position");

    let mut spec = AgentSpec::new("sleepy", Architecture::Reactive);
    spec.position = Some(at(0, 0));
    let sleepy = agent::spawn_agent(w, spec).unwrap();
    assert_eq!(reason(w, mv(sleepy, 1, 0)), "inactive");
    w.destroy_entity(e).unwrap();
    assert_eq!(reason(w, mv(e, 1, 0)), "stale-issuer");
}

#[test]
fn converging_movers_collide_once_visible_next_tick() {
    let mut sim = grid_world(5, 5);
    let w = sim.world_mut();
    w.enable_journal();
    let a = put(w, 0, 1);
    let b = put(w, 2, 1);
    submit_action(w, mv(a, 1, 0));
    submit_action(w, mv(b, -1, 0));
    w.tick().unwrap();
    assert_eq!(pos(w, a), at(1, 1));
    assert_eq!(pos(w, b), at(1, 1));
    assert!(collisions(&w.take_journal()).is_empty());
    w.tick().unwrap();
    let journal = w.take_journal();
    let hits = collisions(&journal);
    assert_eq!(hits.len(), 1);
    assert_eq!(hits[0].payload["x"], json!(1));
    assert_eq!(hits[0].payload["entities"], json!([a.to_string(), b.to_string()]));
}

#[test]
fn outcomes_follow_issuer_order() {
    let mut sim = grid_world(5, 5);
    let w = sim.world_mut();
    let a = put(w, 0, 0);
    let b = put(w, 4, 4);
    let out = apply_actions(w, vec![mv(b, -1, 0), mv(a, 1, 0), ActionDescriptor::new(a, ActionKind::Noop)]).unwrap();
    let order: Vec<(EntityId, &str)> = out.iter().map(|o| (o.issuer, o.action.name())).collect();
    assert_eq!(order, [(a, "move"), (a, "noop"), (b, "move")]);
    assert_eq!(last_outcome(w, a).unwrap().action, ActionKind::Noop);
}

#[test]
fn interact_requires_reach() {
    let mut sim = grid_world(5, 5);
    let w = sim.world_mut();
    let a = put(w, 0, 0);
    let near = put(w, 1, 1);
    let far = put(w, 3, 3);
    let interact = |target| ActionDescriptor::new(a, ActionKind::Interact { target });
    assert_eq!(apply_action(w, interact(near)).unwrap().status, OutcomeStatus::Applied);
    assert_eq!(apply_action(w, interact(far)).unwrap().reason.as_deref(), Some("out-of-reach"));
    w.destroy_entity(far).unwrap();
    assert_eq!(apply_action(w, interact(far)).unwrap().reason.as_deref(), Some("unknown-target"));
}

#[test]
fn say_hands_off_to_messaging() {
    let mut sim = grid_world(5, 5);
    let w = sim.world_mut();
    let a = put(w, 0, 0);
    let b = put(w, 4, 4);
    let say = ActionKind::Say(OutgoingMessage::new(Target::Agent(b), "inform").with("text", "hi"));
    submit_action(w, ActionDescriptor::new(a, say));
    w.tick().unwrap();
    let inbox = &w.get::<MessageComponent>(b).unwrap().unwrap().inbox;
    assert_eq!(inbox.len(), 1);
    assert_eq!(inbox[0].payload["text"], json!("hi"));
}

#[test]
fn radius_zero_sees_own_cell_and_facts() {
    let mut sim = grid_world(5, 5);
    let w = sim.world_mut();
    let me = put(w, 2, 2);
    let roommate = put(w, 2, 2);
    put(w, 3, 2);
    set_fact(w, "weather", json!("rain"), Visibility::All);
    let keys: Vec<String> = perceive(w, me, 0).unwrap().into_iter().map(|p| p.key).collect();
    assert_eq!(
        keys,
        [
            "self.x".to_string(),
            "self.y".into(),
            format!("entity.{me}.x"),
            format!("entity.{me}.y"),
            format!("entity.{roommate}.x"),
            format!("entity.{roommate}.y"),
            "weather".into(),
        ]
    );
}

#[test]
fn distance_three_is_beyond_radius_two() {
    let mut sim = grid_world(10, 10);
    let w = sim.world_mut();
    let a = put(w, 1, 1);
    let b = put(w, 4, 2);
    assert!(!seen_ids(&perceive(w, a, 2).unwrap()).contains(&b.to_string()));
    assert!(!seen_ids(&perceive(w, b, 2).unwrap()).contains(&a.to_string()));
    assert!(seen_ids(&perceive(w, a, 3).unwrap()).contains(&b.to_string()));
}

#[test]
fn object_types_are_perceived() {
    let mut sim = grid_world(5, 5);
    let w = sim.world_mut();
    let mut spec = AgentSpec::new("a", Architecture::Reactive);
    spec.position = Some(at(0, 0));
    spec.object_type = Some("robot".into());
    let a = agent::spawn_agent(w, spec).unwrap();
    let percepts = perceive(w, a, 1).unwrap();
    let ty = percepts.iter().find(|p| p.key == format!("entity.{a}.type")).unwrap();
    assert_eq!(ty.value, json!("robot"));
    assert!(percepts.iter().all(|p| p.confidence == 1.0));
}

#[test]
fn unpositioned_agents_see_only_facts() {
    let mut sim = Simulation::empty(1);
    let w = sim.world_mut();
    let a = w.create_entity().unwrap();
    put(w, 0, 0);
    set_fact(w, "k", json!(1), Visibility::All);
    let keys: Vec<String> = perceive(w, a, 100).unwrap().into_iter().map(|p| p.key).collect();
    assert_eq!(keys, ["k"]);
}

#[test]
fn fact_visibility() {
    let mut sim = Simulation::empty(1);
    let w = sim.world_mut();
    let a = w.create_entity().unwrap();
    let b = w.create_entity().unwrap();
    set_fact(w, "public", json!(true), Visibility::All);
    set_fact(w, "secret", json!(42), Visibility::Only(BTreeSet::from([a])));
    let keys = |w: &World, id| perceive(w, id, 0).unwrap().into_iter().map(|p| p.key).collect::<Vec<_>>();
    assert_eq!(keys(w, a), ["public", "secret"]);
    assert_eq!(keys(w, b), ["public"]);
    w.destroy_entity(a).unwrap();
    let facts = w.resource::<FactRegistry>().unwrap();
    assert_eq!(facts.visibility("secret"), Some(&Visibility::Only(BTreeSet::new())));
}

/// 100 random facts with random audiences: each viewer's fact percepts are
/// exactly the keys whose audience admits it, in key order.
#[test]
fn fact_visibility_matches_membership_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut sim = Simulation::empty(1);
    let w = sim.world_mut();
    let viewers: Vec<EntityId> = (0..8).map(|_| w.create_entity().unwrap()).collect();
    let mut oracle: BTreeMap<String, Option<BTreeSet<EntityId>>> = BTreeMap::new();
    for i in 0..100 {
        let key = format!("fact{:03}", rng.random_range(0..1000));
        let audience = rng
            .random_bool(0.5)
            .then(|| viewers.iter().copied().filter(|_| rng.random_bool(0.3)).collect::<BTreeSet<_>>());
        let vis = audience.clone().map_or(Visibility::All, Visibility::Only);
        set_fact(w, key.clone(), json!(i), vis);
        oracle.insert(key, audience);
    }
    for &v in &viewers {
        let got: Vec<String> = perceive(w, v, 0).unwrap().into_iter().map(|p| p.key).collect();
        let want: Vec<String> = oracle
            .iter()
            .filter(|(_, aud)| aud.as_ref().is_none_or(|s| s.contains(&v)))
            .map(|(k, _)| k.clone())
            .collect();
        assert_eq!(got, want);
    }
}

/// Random 10×10 worlds: spatial percepts equal a brute-force scan over all
/// pairs with |dx| ≤ r and |dy| ≤ r.
#[test]
fn perception_matches_all_pairs_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..20 {
        let mut sim = grid_world(10, 10);
        let w = sim.world_mut();
        let placed: Vec<(EntityId, i64, i64)> = (0..25)
            .map(|_| {
                let (x, y) = (rng.random_range(0..10), rng.random_range(0..10));
                (put(w, x, y), x, y)
            })
            .collect();
        for &(me, mx, my) in &placed {
            let want: BTreeSet<String> = placed
                .iter()
                .filter(|(_, x, y)| (x - mx).abs() <= 2 && (y - my).abs() <= 2)
                .map(|(id, _, _)| id.to_string())
                .collect();
            assert_eq!(seen_ids(&perceive(w, me, 2).unwrap()), want);
        }
    }
}

#[test]
fn velocity_is_integrated_within_bounds() {
    let mut sim = grid_world(3, 3);
    let w = sim.world_mut();
    let e = put(w, 0, 0);
    w.insert(e, Velocity { dx: 1, dy: 0 }).unwrap();
    for _ in 0..5 {
        w.tick().unwrap();
    }
    assert_eq!(pos(w, e), at(2, 0));
}

#[test]
fn grid_rejects_obstacle_under_entity() {
    let mut sim = Simulation::empty(1);
    let w = sim.world_mut();
    put(w, 1, 1);
    let grid = GridEnvironment::new(3, 3).unwrap().with_obstacles([at(1, 1)]).unwrap();
    assert_eq!(set_grid(w, grid).unwrap_err().code(), "obstacle");
}

/// Reference distances by repeated relaxation over every cell, with no
/// queue and no neighbour ordering.
fn relaxation_distances(grid: &GridEnvironment, from: Position) -> BTreeMap<Position, usize> {
    let mut dist = BTreeMap::from([(from, 0usize)]);
    loop {
        let mut changed = false;
        for x in 0..i64::from(grid.width) {
            for y in 0..i64::from(grid.height) {
                let cell = at(x, y);
                if grid.is_obstacle(cell) {
                    continue;
                }
                let best = [(1, 0), (-1, 0), (0, 1), (0, -1)]
                    .iter()
                    .filter_map(|(dx, dy)| dist.get(&cell.offset(*dx, *dy)).map(|d| d + 1))
                    .min();
                if let Some(b) = best {
                    if dist.get(&cell).is_none_or(|d| b < *d) {
                        dist.insert(cell, b);
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return dist;
        }
    }
}

#[test]
fn step_toward_current_cell_is_zero() {
    let grid = GridEnvironment::new(3, 3).unwrap();
    assert_eq!(path::next_step_toward(&grid, at(1, 1), at(1, 1)), Some((0, 0)));
    assert_eq!(path::next_step_toward(&grid, at(0, 0), at(2, 0)), Some((1, 0)));
}

#[test]
fn walled_off_targets_are_unreachable() {
    let grid = GridEnvironment::new(3, 3).unwrap().with_obstacles([at(1, 0), at(1, 1), at(1, 2)]).unwrap();
    assert_eq!(path::shortest_path(&grid, at(0, 0), at(2, 2)), None);
}

fn arb_grid() -> impl Strategy<Value = GridEnvironment> {
    (2u32..9, 2u32..9).prop_flat_map(|(w, h)| {
        proptest::collection::btree_set((0..i64::from(w), 0..i64::from(h)), 0..(w * h / 3) as usize).prop_map(
            move |cells| {
                GridEnvironment::new(w, h).unwrap().with_obstacles(cells.into_iter().map(|(x, y)| at(x, y))).unwrap()
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn bfs_agrees_with_relaxation(grid in arb_grid(), fx in 0i64..9, fy in 0i64..9, tx in 0i64..9, ty in 0i64..9) {
        let (from, to) = (at(fx, fy), at(tx, ty));
        prop_assume!(grid.is_passable(from) && grid.is_passable(to));
        let dist = relaxation_distances(&grid, from);
        match path::shortest_path(&grid, from, to) {
            None => prop_assert!(!dist.contains_key(&to)),
            Some(path) => {
                prop_assert_eq!(path.len() - 1, dist[&to]);
                prop_assert_eq!(path[0], from);
                prop_assert_eq!(*path.last().unwrap(), to);
                for pair in path.windows(2) {
                    prop_assert_eq!(pair[0].manhattan(pair[1]), 1);
                    prop_assert!(grid.is_passable(pair[1]));
                }
            }
        }
    }

    /// Random unit moves (plus some junk) for a crowd: every position stays
    /// on passable cells, every action gets one outcome, and collisions
    /// match an enumeration of shared cells some mover entered.
    #[test]
    fn moves_preserve_containment_and_count_collisions(
        grid in arb_grid(),
        seed in any::<u64>(),
        rounds in 1usize..6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sim = Simulation::empty(seed);
        let w = sim.world_mut();
        set_grid(w, grid.clone()).unwrap();
        let free: Vec<Position> = (0..i64::from(grid.width))
            .flat_map(|x| (0..i64::from(grid.height)).map(move |y| at(x, y)))
            .filter(|c| grid.is_passable(*c))
            .collect();
        prop_assume!(!free.is_empty());
        let ids: Vec<EntityId> = (0..6)
            .map(|_| {
                let c = free[rng.random_range(0..free.len())];
                put(w, c.x, c.y)
            })
            .collect();
        w.enable_journal();
        for _ in 0..rounds {
            let steps = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1)];
            let batch: Vec<ActionDescriptor> = ids
                .iter()
                .map(|&id| {
                    let (dx, dy) = steps[rng.random_range(0..steps.len())];
                    mv(id, dx, dy)
                })
                .collect();

            // Independent model of the pass.
            let mut model: BTreeMap<EntityId, Position> = ids.iter().map(|&id| (id, pos(w, id))).collect();
            let mut entered = BTreeSet::new();
            for a in &batch {
                let ActionKind::Move { dx, dy } = a.kind else { unreachable!() };
                let to = model[&a.issuer].offset(dx, dy);
                if dx.abs() + dy.abs() == 1 && grid.is_passable(to) {
                    model.insert(a.issuer, to);
                    entered.insert(to);
                }
            }
            let expected = entered
                .iter()
                .filter(|c| model.values().filter(|p| p == c).count() > 1)
                .count();

            for a in &batch {
                submit_action(w, a.clone());
            }
            w.tick().unwrap();
            w.take_journal();
            w.tick().unwrap();
            let got = collisions(&w.take_journal()).len();
            prop_assert_eq!(got, expected);
            prop_assert_eq!(w.resource::<ActionLog>().unwrap().recent.len(), 0);

            for &id in &ids {
                let p = pos(w, id);
                prop_assert!(grid.is_passable(p));
                prop_assert_eq!(p, model[&id]);
            }
        }
    }
}

#[test]
fn one_outcome_per_submitted_action() {
    let mut sim = grid_world(5, 5);
    let w = sim.world_mut();
    let ids: Vec<EntityId> = (0..4).map(|i| put(w, i, 0)).collect();
    for &id in &ids {
        submit_action(w, mv(id, 0, 1));
        submit_action(w, mv(id, 0, -1));
        submit_action(w, ActionDescriptor::new(id, ActionKind::Noop));
    }
    w.tick().unwrap();
    let log = w.resource::<ActionLog>().unwrap();
    assert_eq!(log.recent.len(), 12);
    for &id in &ids {
        assert_eq!(log.recent.iter().filter(|o| o.issuer == id).count(), 3);
    }
}
