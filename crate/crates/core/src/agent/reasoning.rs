use std::collections::BTreeMap;

use serde_json::Value;

use super::{
    clamp_confidence, current_percepts, AgentComponent, AgentError, AgentState, Architecture, AwaitedStep,
    BehaviorRule, BeliefComponent, ExecutionState, FailureKind, Goal, GoalComponent, Intention, IntentionComponent,
    ObjectComponent, Plan, PlanStep, RecoveryPolicy, RevisionStrategy, GOAL_EVENT,
};
use crate::ecs::{Component, DispatchMode, EcsError, EntityId, EventRecord, Level, World};
use crate::environment::{
    self, last_outcome, submit_action, ActionDescriptor, ActionKind, GridEnvironment, OutcomeStatus, Percept, Position,
};
use crate::messaging::MessageComponent;

/// Percepts gathered by the perception system in the current tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PerceptCache {
    by_agent: BTreeMap<EntityId, Vec<Percept>>,
}

impl PerceptCache {
    pub fn get(&self, id: EntityId) -> Option<&[Percept]> {
        self.by_agent.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (EntityId, &[Percept])> {
        self.by_agent.iter().map(|(id, p)| (*id, p.as_slice()))
    }
}

/// Applies `percepts` in order to a copy of `beliefs`.
pub fn revise_beliefs(beliefs: &BeliefComponent, percepts: &[Percept]) -> BeliefComponent {
    let mut out = beliefs.clone();
    revise_in_place(&mut out, percepts);
    out
}

fn revise_in_place(beliefs: &mut BeliefComponent, percepts: &[Percept]) {
    for p in percepts {
        let confidence = clamp_confidence(p.confidence);
        let adopt = match beliefs.revision_strategy {
            RevisionStrategy::Overwrite => true,
            RevisionStrategy::MaxConfidence => match beliefs.beliefs.contains_key(&p.key) {
                false => true,
                true => confidence >= beliefs.confidence_values.get(&p.key).copied().unwrap_or(0.0),
            },
        };
        if adopt {
            beliefs.set(p.key.clone(), p.value.clone(), confidence);
        }
    }
}

/// Index of the rule to fire: highest salience among rules whose trigger
/// holds, the earliest such rule on ties.
pub fn select_rule<'a>(rules: &[BehaviorRule], lookup: impl Fn(&str) -> Option<&'a Value>) -> Option<usize> {
    let mut best: Option<(usize, i64)> = None;
    for (i, rule) in rules.iter().enumerate() {
        if best.is_some_and(|(_, s)| rule.salience <= s) {
            continue;
        }
        if rule.trigger.holds(&lookup) {
            best = Some((i, rule.salience));
        }
    }
    best.map(|(i, _)| i)
}

/// The goal to pursue: among open goals whose constraints hold, highest
/// priority first, then the lexicographically smallest id.
pub fn select_goal<'g>(goals: &'g GoalComponent, beliefs: &BeliefComponent) -> Option<&'g Goal> {
    goals
        .goals
        .iter()
        .filter(|g| !goals.achievements.contains(&g.id))
        .filter(|g| g.constraints.iter().all(|c| c.holds(|k| beliefs.get(k))))
        .min_by(|a, b| b.priority.cmp(&a.priority).then_with(|| a.id.cmp(&b.id)))
}

fn select_plan<'p>(
    goal: &Goal,
    plans: &'p [Plan],
    beliefs: &BeliefComponent,
    ints: &IntentionComponent,
) -> Option<&'p Plan> {
    let excluded = ints.excluded.get(&goal.id);
    plans.iter().find(|p| {
        p.achieves(&goal.id)
            && goal.plans.as_ref().is_none_or(|allowed| allowed.contains(&p.id))
            && excluded.is_none_or(|ex| !ex.contains(&p.id))
            && p.context.holds(|k| beliefs.get(k))
    })
}

struct Agent<'w> {
    component: &'w AgentComponent,
    behavior: Option<&'w super::Behavior>,
}

fn load(world: &World, id: EntityId, expected: Architecture) -> Result<Agent<'_>, AgentError> {
    let component = world.get::<AgentComponent>(id)?.ok_or(AgentError::NotAnAgent(id))?;
    if component.architecture != expected {
        return Err(AgentError::WrongArchitecture { id, expected, actual: component.architecture });
    }
    let behavior = world.get::<ObjectComponent>(id)?.and_then(|o| o.behavior.as_ref());
    Ok(Agent { component, behavior })
}

fn fire<'a>(rules: &[BehaviorRule], id: EntityId, lookup: impl Fn(&str) -> Option<&'a Value>) -> Vec<ActionDescriptor> {
    select_rule(rules, lookup).map(|i| vec![ActionDescriptor::new(id, rules[i].action.clone())]).unwrap_or_default()
}

/// Fires the best rule whose trigger holds over this tick's percepts.
/// Beliefs are left alone.
pub fn reactive_step(world: &mut World, id: EntityId) -> Result<Vec<ActionDescriptor>, AgentError> {
    let agent = load(world, id, Architecture::Reactive)?;
    if !agent.component.reasons() {
        return Ok(Vec::new());
    }
    let rules = agent.behavior.map(|b| b.rules.clone()).unwrap_or_default();
    let percepts = current_percepts(world, id)?;
    let latest: BTreeMap<&str, &Value> = percepts.iter().map(|p| (p.key.as_str(), &p.value)).collect();
    Ok(fire(&rules, id, |k| latest.get(k).copied()))
}

/// Revises beliefs from this tick's percepts, then fires the best rule
/// whose trigger holds over the beliefs.
pub fn cognitive_step(world: &mut World, id: EntityId) -> Result<Vec<ActionDescriptor>, AgentError> {
    let agent = load(world, id, Architecture::Cognitive)?;
    if !agent.component.reasons() {
        return Ok(Vec::new());
    }
    let rules = agent.behavior.map(|b| b.rules.clone()).unwrap_or_default();
    let percepts = current_percepts(world, id)?;
    let beliefs = world.get_mut::<BeliefComponent>(id)?.ok_or(AgentError::NotAnAgent(id))?;
    revise_in_place(beliefs, &percepts);
    let beliefs = world.get::<BeliefComponent>(id)?.expect("present above");
    Ok(fire(&rules, id, |k| beliefs.get(k)))
}

/// Moves achieved goals to the achievements set and forgets everything
/// that pointed at them. Returns the ids achieved.
fn mark_achievements(
    beliefs: &BeliefComponent,
    goals: &mut GoalComponent,
    ints: &mut IntentionComponent,
) -> Vec<String> {
    let achieved: Vec<String> =
        goals.goals.iter().filter(|g| g.condition.holds(|k| beliefs.get(k))).map(|g| g.id.clone()).collect();
    for id in &achieved {
        goals.goals.retain(|g| g.id != *id);
        goals.achievements.insert(id.clone());
        ints.intentions.retain(|i| i.goal_id != *id);
        ints.excluded.remove(id);
        if ints.awaiting.as_ref().is_some_and(|a| a.intention.goal_id == *id) {
            ints.awaiting = None;
        }
    }
    if !achieved.is_empty() && ints.intentions.is_empty() {
        ints.execution_state = ExecutionState::Idle;
    }
    achieved
}

/// Applies the contingency for `kind`. Without a configured policy the
/// agent replans once per goal and drops the goal on the next failure.
/// Returns whether the goal was dropped.
fn handle_failure(
    goals: &mut GoalComponent,
    ints: &mut IntentionComponent,
    failed: Intention,
    kind: FailureKind,
) -> bool {
    let policy = ints.contingencies.get(&kind).copied().unwrap_or_else(|| {
        if ints.excluded.get(&failed.goal_id).is_none_or(|ex| ex.is_empty()) {
            RecoveryPolicy::Replan
        } else {
            RecoveryPolicy::DropGoal
        }
    });
    ints.intentions.clear();
    match policy {
        RecoveryPolicy::Retry => {
            ints.intentions.push(failed);
            ints.execution_state = ExecutionState::Executing;
            false
        }
        RecoveryPolicy::Replan => {
            ints.excluded.entry(failed.goal_id).or_default().insert(failed.plan_id);
            ints.execution_state = ExecutionState::Idle;
            false
        }
        RecoveryPolicy::DropGoal => {
            goals.goals.retain(|g| g.id != failed.goal_id);
            ints.excluded.remove(&failed.goal_id);
            goals.dropped.insert(failed.goal_id);
            ints.execution_state = ExecutionState::Failed;
            true
        }
    }
}

fn advance(ints: &mut IntentionComponent, plan: &Plan) {
    let Some(current) = ints.intentions.first_mut() else {
        return;
    };
    current.step_index += 1;
    if current.step_index >= plan.steps.len() {
        if plan.repeat {
            current.step_index = 0;
        } else {
            ints.intentions.remove(0);
            if ints.intentions.is_empty() {
                ints.execution_state = ExecutionState::Idle;
            }
        }
    }
}

/// First move of a shortest route to `target`: `(0, 0)` when already
/// there, `None` without a position or without a route.
fn route(world: &World, id: EntityId, target: Position) -> Result<Option<(i64, i64)>, EcsError> {
    let Some(&from) = world.get::<Position>(id)? else {
        return Ok(None);
    };
    Ok(match world.resource::<GridEnvironment>() {
        Some(grid) => environment::next_step_toward(grid, from, target),
        None if from.x != target.x => Some(((target.x - from.x).signum(), 0)),
        None => Some((0, (target.y - from.y).signum())),
    })
}

/// One BDI reasoning step:
///
/// 1. revise beliefs from this tick's percepts;
/// 2. move goals whose condition holds to the achievements;
/// 3. treat a blocked outcome of the previous step's action as a failure;
/// 4. drop the current intention if its plan context no longer holds;
/// 5. without an intention, select a goal and the first applicable plan
///    (no plan: execution state `blocked`);
/// 6. execute one step of the current intention.
pub fn bdi_step(world: &mut World, id: EntityId) -> Result<Vec<ActionDescriptor>, AgentError> {
    let agent = load(world, id, Architecture::Bdi)?;
    if !agent.component.reasons() {
        return Ok(Vec::new());
    }
    let plans = agent.behavior.map(|b| b.plans.clone()).unwrap_or_default();
    let percepts = current_percepts(world, id)?;
    let tick = world.current_tick();
    let missing = || AgentError::NotAnAgent(id);
    let mut beliefs = world.get::<BeliefComponent>(id)?.cloned().ok_or_else(missing)?;
    let mut goals = world.get::<GoalComponent>(id)?.cloned().ok_or_else(missing)?;
    let mut ints = world.get::<IntentionComponent>(id)?.cloned().ok_or_else(missing)?;
    let find_plan = |plan_id: &str| plans.iter().find(|p| p.id == plan_id);

    revise_in_place(&mut beliefs, &percepts);
    let achieved = mark_achievements(&beliefs, &mut goals, &mut ints);

    let mut gave_up = false;
    if let Some(awaited) = ints.awaiting.take() {
        let failed =
            last_outcome(world, id).is_some_and(|o| o.tick == awaited.tick && o.status != OutcomeStatus::Applied);
        if failed && goals.goal(&awaited.intention.goal_id).is_some() {
            gave_up |= handle_failure(&mut goals, &mut ints, awaited.intention, FailureKind::ActionBlocked);
        }
    }

    if let Some(current) = ints.current() {
        let keep = goals.goal(&current.goal_id).is_some()
            && find_plan(&current.plan_id)
                .is_some_and(|p| current.step_index < p.steps.len() && p.context.holds(|k| beliefs.get(k)));
        if !keep {
            ints.intentions.clear();
        }
    }

    if ints.intentions.is_empty() {
        ints.execution_state = match select_goal(&goals, &beliefs) {
            None if gave_up || ints.execution_state == ExecutionState::Failed => ExecutionState::Failed,
            None => ExecutionState::Idle,
            Some(goal) => match select_plan(goal, &plans, &beliefs, &ints) {
                Some(plan) => {
                    ints.intentions.push(Intention {
                        goal_id: goal.id.clone(),
                        plan_id: plan.id.clone(),
                        step_index: 0,
                    });
                    ExecutionState::Executing
                }
                None => ExecutionState::Blocked,
            },
        };
    }

    let mut actions = Vec::new();
    if let Some(current) = ints.current().cloned() {
        let plan = find_plan(&current.plan_id).expect("selected from the library");
        ints.execution_state = ExecutionState::Executing;
        let mut emit = |ints: &mut IntentionComponent, kind: ActionKind| {
            actions.push(ActionDescriptor::new(id, kind));
            ints.awaiting = Some(AwaitedStep { intention: current.clone(), tick });
        };
        match &plan.steps[current.step_index] {
            PlanStep::Act(kind) => {
                emit(&mut ints, kind.clone());
                advance(&mut ints, plan);
            }
            PlanStep::Believe { key, value } => {
                beliefs.set(key.clone(), value.clone(), 1.0);
                advance(&mut ints, plan);
            }
            PlanStep::MoveToward { x, y } => match route(world, id, Position::new(*x, *y))? {
                Some((0, 0)) => advance(&mut ints, plan),
                Some((dx, dy)) => {
                    emit(&mut ints, ActionKind::Move { dx, dy });
                    advance(&mut ints, plan);
                }
                None => {
                    handle_failure(&mut goals, &mut ints, current.clone(), FailureKind::NoPath);
                }
            },
        }
    }

    world.insert(id, beliefs)?;
    world.insert(id, goals)?;
    world.insert(id, ints)?;
    announce(world, id, &achieved)?;
    Ok(actions)
}

fn announce(world: &mut World, id: EntityId, achieved: &[String]) -> Result<(), EcsError> {
    for goal in achieved {
        world.log(Level::Info, "goal-achieved", &[("agent", &id), ("goal", goal)]);
        world.emit_event(
            EventRecord::new(GOAL_EVENT).with_source(id).with("goal", goal.as_str()),
            DispatchMode::Queued,
        )?;
    }
    Ok(())
}

/// Post-action pass for BDI agents: observe the world as the actions left
/// it, revise beliefs and record achieved goals.
pub fn planning_pass(world: &mut World, id: EntityId) -> Result<(), AgentError> {
    let Some(agent) = world.get::<AgentComponent>(id)? else {
        return Ok(());
    };
    if agent.architecture != Architecture::Bdi || !agent.reasons() {
        return Ok(());
    }
    let percepts = environment::perceive(world, id, agent.perception_radius)?;
    let (Some(mut beliefs), Some(mut goals), Some(mut ints)) = (
        world.get::<BeliefComponent>(id)?.cloned(),
        world.get::<GoalComponent>(id)?.cloned(),
        world.get::<IntentionComponent>(id)?.cloned(),
    ) else {
        return Ok(());
    };
    revise_in_place(&mut beliefs, &percepts);
    let achieved = mark_achievements(&beliefs, &mut goals, &mut ints);
    world.insert(id, beliefs)?;
    world.insert(id, goals)?;
    world.insert(id, ints)?;
    announce(world, id, &achieved)?;
    Ok(())
}

/// Fills the percept cache for every active agent: environment percepts
/// followed by the messages delivered at the end of the previous tick,
/// as `message.<performative>` (the sender) and
/// `message.<performative>.<field>` (payload fields).
pub(super) fn perception_system(world: &mut World) -> Result<(), EcsError> {
    let mut cache = PerceptCache::default();
    for id in world.query(&[AgentComponent::KIND])? {
        let agent = world.get::<AgentComponent>(id)?.expect("queried");
        if agent.state != AgentState::Active {
            continue;
        }
        let mut percepts = environment::perceive(world, id, agent.perception_radius)?;
        if let Ok(Some(inbox)) = world.get::<MessageComponent>(id) {
            for msg in inbox.fresh_messages() {
                let base = format!("message.{}", msg.performative);
                percepts.push(Percept::certain(base.clone(), msg.sender.to_string()));
                for (k, v) in &msg.payload {
                    percepts.push(Percept::certain(format!("{base}.{k}"), v.clone()));
                }
            }
        }
        cache.by_agent.insert(id, percepts);
    }
    world.insert_resource(cache);
    Ok(())
}

/// Runs one reasoning step for every agent that reasons, ascending by id,
/// and stages the resulting actions.
pub(super) fn agent_system(world: &mut World) -> Result<(), AgentError> {
    for id in world.query(&[AgentComponent::KIND])? {
        let agent = world.get::<AgentComponent>(id)?.expect("queried");
        if !agent.reasons() {
            continue;
        }
        let actions = match agent.architecture {
            Architecture::Reactive => reactive_step(world, id)?,
            Architecture::Cognitive => cognitive_step(world, id)?,
            Architecture::Bdi => bdi_step(world, id)?,
        };
        for action in actions {
            submit_action(world, action);
        }
    }
    Ok(())
}
