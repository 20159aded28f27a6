use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AgentError, Architecture, BehaviorRule, FailureKind, Goal, Plan, RecoveryPolicy, RevisionStrategy};
use crate::environment::Position;

/// Declarative description of one agent, as loaded from configuration or
/// posted to the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AgentSpec {
    pub name: String,
    pub architecture: Architecture,
    /// Defaults to `agent`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_type: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub properties: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub initial_beliefs: BTreeMap<String, Value>,
    #[serde(default)]
    pub revision_strategy: RevisionStrategy,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub goals: Vec<Goal>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub plans: Vec<Plan>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<BehaviorRule>,
    /// Groups to join, by name or id.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<String>,
    /// Roles to take; each role's group must be listed in `groups`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub roles: Vec<RoleSpec>,
    /// Topics to subscribe to.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub topics: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Position>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub contingencies: BTreeMap<FailureKind, RecoveryPolicy>,
    /// 0 means the reasoning systems leave the agent alone.
    #[serde(default = "default_autonomy")]
    pub autonomy_level: f64,
    /// Chebyshev radius of spatial perception.
    #[serde(default = "default_radius")]
    pub perception_radius: u64,
}

fn default_autonomy() -> f64 {
    1.0
}

fn default_radius() -> u64 {
    2
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RoleSpec {
    pub role: String,
    pub group: String,
    #[serde(default)]
    pub capabilities: BTreeSet<String>,
}

/// A problem with one field of a spec, e.g. `goals[1].plans[0]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl AgentSpec {
    pub fn new(name: impl Into<String>, architecture: Architecture) -> Self {
        Self {
            name: name.into(),
            architecture,
            object_type: None,
            properties: BTreeMap::new(),
            initial_beliefs: BTreeMap::new(),
            revision_strategy: RevisionStrategy::default(),
            goals: Vec::new(),
            plans: Vec::new(),
            rules: Vec::new(),
            groups: Vec::new(),
            roles: Vec::new(),
            topics: Vec::new(),
            position: None,
            contingencies: BTreeMap::new(),
            autonomy_level: default_autonomy(),
            perception_radius: default_radius(),
        }
    }

    /// Checks everything that can be checked without a world.
    pub fn validate(&self) -> Result<(), AgentError> {
        let diags = self.diagnostics();
        if diags.is_empty() {
            Ok(())
        } else {
            Err(AgentError::InvalidSpec(diags))
        }
    }

    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        if self.name.trim().is_empty() {
            out.push(Diagnostic::new("name", "must not be empty"));
        }
        if self.object_type.as_deref().is_some_and(|t| t.trim().is_empty()) {
            out.push(Diagnostic::new("objectType", "must not be empty"));
        }
        if !(0.0..=1.0).contains(&self.autonomy_level) {
            out.push(Diagnostic::new("autonomyLevel", "must lie in [0, 1]"));
        }

        let mut goal_ids = BTreeSet::new();
        for (i, goal) in self.goals.iter().enumerate() {
            if goal.id.is_empty() {
                out.push(Diagnostic::new(format!("goals[{i}].id"), "must not be empty"));
            } else if !goal_ids.insert(goal.id.as_str()) {
                out.push(Diagnostic::new(format!("goals[{i}].id"), format!("duplicate goal id `{}`", goal.id)));
            }
            for (j, plan) in goal.plans.iter().flatten().enumerate() {
                if !self.plans.iter().any(|p| p.id == *plan) {
                    out.push(Diagnostic::new(format!("goals[{i}].plans[{j}]"), format!("unknown plan `{plan}`")));
                }
            }
        }

        let mut plan_ids = BTreeSet::new();
        for (i, plan) in self.plans.iter().enumerate() {
            if plan.id.is_empty() {
                out.push(Diagnostic::new(format!("plans[{i}].id"), "must not be empty"));
            } else if !plan_ids.insert(plan.id.as_str()) {
                out.push(Diagnostic::new(format!("plans[{i}].id"), format!("duplicate plan id `{}`", plan.id)));
            }
            if plan.steps.is_empty() {
                out.push(Diagnostic::new(format!("plans[{i}].steps"), "must not be empty"));
            }
            if !self.goals.iter().any(|g| plan.achieves(&g.id)) {
                out.push(Diagnostic::new(
                    format!("plans[{i}].achievesGoal"),
                    format!("no goal matches `{}`", plan.achieves_goal),
                ));
            }
        }

        for (i, role) in self.roles.iter().enumerate() {
            if role.role.is_empty() {
                out.push(Diagnostic::new(format!("roles[{i}].role"), "must not be empty"));
            }
            if !self.groups.contains(&role.group) {
                out.push(Diagnostic::new(
                    format!("roles[{i}].group"),
                    format!("group `{}` is not listed in groups", role.group),
                ));
            }
        }
        out
    }
}
