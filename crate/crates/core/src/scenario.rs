//! Scenario files: the environment, groups and agents a run starts from.

use std::collections::BTreeSet;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::{AgentSpec, Diagnostic};
use crate::environment::Position;
use crate::messaging::BrokerConfig;
use crate::organization::{Policy, PolicyKind};

/// The grid-world BDI scenario shipped with the crate: one BDI agent walks
/// from (0,0) to (4,4) on an empty 5×5 grid while a reactive beacon
/// broadcasts on a topic a cognitive listener subscribes to.
pub const GRID_BDI_SCENARIO: &str = include_str!("../scenarios/grid_bdi.json");

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Used unless the caller supplies a seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub environment: EnvironmentConfig,
    /// Created in order; a parent must be listed before its children.
    #[serde(default)]
    pub groups: Vec<GroupConfig>,
    /// Spawned in order, after the groups.
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub tick_mode: TickMode,
    #[serde(default)]
    pub messaging: BrokerConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct EnvironmentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub facts: Vec<FactConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct GridConfig {
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub obstacles: Vec<Position>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct FactConfig {
    pub key: String,
    pub value: Value,
    #[serde(default)]
    pub visibility: FactVisibility,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum FactVisibility {
    #[default]
    All,
    /// Only the named agents.
    Agents(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct GroupConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default)]
    pub policies: Vec<Policy>,
    /// Pairs of roles no member may hold together in this group.
    #[serde(default)]
    pub role_conflicts: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum TickMode {
    /// Ticks only on request.
    #[default]
    Manual,
    /// Ticks on a timer, `rate` times per second.
    Auto { rate: f64 },
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{message} at line {line}, column {column}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid scenario: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::Parse { .. } => "parse-error",
            ConfigError::Invalid(_) => "invalid-config",
        }
    }
}

impl ScenarioConfig {
    /// Parses and validates scenario JSON.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: ScenarioConfig = serde_json::from_str(text).map_err(|e| {
            // serde_json appends the position itself; keep it out of the message.
            let full = e.to_string();
            let suffix = format!(" at line {} column {}", e.line(), e.column());
            ConfigError::Parse {
                line: e.line(),
                column: e.column(),
                message: full.strip_suffix(&suffix).unwrap_or(&full).to_owned(),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn grid_bdi() -> Self {
        Self::from_json(GRID_BDI_SCENARIO).expect("bundled scenario is valid")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let diags = self.diagnostics();
        if diags.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(diags))
        }
    }

    /// Every problem found, with the path of the offending field.
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        if let Some(grid) = &self.environment.grid {
            if grid.width == 0 || grid.height == 0 {
                out.push(Diagnostic::new("environment.grid", "width and height must be positive"));
            }
            let in_bounds =
                |p: &Position| (0..i64::from(grid.width)).contains(&p.x) && (0..i64::from(grid.height)).contains(&p.y);
            for (i, cell) in grid.obstacles.iter().enumerate() {
                if !in_bounds(cell) {
                    out.push(Diagnostic::new(format!("environment.grid.obstacles[{i}]"), "outside the grid"));
                }
            }
            for (i, agent) in self.agents.iter().enumerate() {
                if let Some(pos) = &agent.position {
                    if !in_bounds(pos) {
                        out.push(Diagnostic::new(format!("agents[{i}].position"), "outside the grid"));
                    } else if grid.obstacles.contains(pos) {
                        out.push(Diagnostic::new(format!("agents[{i}].position"), "on an obstacle"));
                    }
                }
            }
        }

        let mut groups = BTreeSet::new();
        for (i, group) in self.groups.iter().enumerate() {
            if group.name.is_empty() {
                out.push(Diagnostic::new(format!("groups[{i}].name"), "must not be empty"));
            }
            if let Some(parent) = &group.parent {
                if *parent == group.name {
                    out.push(Diagnostic::new(format!("groups[{i}].parent"), "a group cannot be its own parent"));
                } else if !groups.contains(parent.as_str()) {
                    out.push(Diagnostic::new(
                        format!("groups[{i}].parent"),
                        format!("group `{parent}` must be listed earlier"),
                    ));
                }
            }
            for (j, policy) in group.policies.iter().enumerate() {
                if policy.kind == PolicyKind::MaxMembers(0) {
                    out.push(Diagnostic::new(format!("groups[{i}].policies[{j}]"), "max-members must be at least 1"));
                }
            }
            if !groups.insert(group.name.as_str()) {
                out.push(Diagnostic::new(format!("groups[{i}].name"), format!("duplicate group `{}`", group.name)));
            }
        }

        let mut names = BTreeSet::new();
        for (i, agent) in self.agents.iter().enumerate() {
            for d in agent.diagnostics() {
                out.push(Diagnostic::new(format!("agents[{i}].{}", d.field), d.message));
            }
            if !names.insert(agent.name.as_str()) {
                out.push(Diagnostic::new(format!("agents[{i}].name"), format!("duplicate agent `{}`", agent.name)));
            }
            for (j, group) in agent.groups.iter().enumerate() {
                if !groups.contains(group.as_str()) {
                    out.push(Diagnostic::new(format!("agents[{i}].groups[{j}]"), format!("unknown group `{group}`")));
                }
            }
        }

        for (i, fact) in self.environment.facts.iter().enumerate() {
            if let FactVisibility::Agents(list) = &fact.visibility {
                for (j, name) in list.iter().enumerate() {
                    if !names.contains(name.as_str()) {
                        out.push(Diagnostic::new(
                            format!("environment.facts[{i}].visibility[{j}]"),
                            format!("unknown agent `{name}`"),
                        ));
                    }
                }
            }
        }

        if let TickMode::Auto { rate } = self.tick_mode {
            if !(rate.is_finite() && rate > 0.0) {
                out.push(Diagnostic::new("tickMode.auto.rate", "must be a positive number"));
            }
        }
        let drop = self.messaging.drop_probability;
        if !(0.0..1.0).contains(&drop) {
            out.push(Diagnostic::new("messaging.dropProbability", "must lie in [0, 1)"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenario_is_valid() {
        let config = ScenarioConfig::grid_bdi();
        assert_eq!(config.seed, Some(42));
        assert!(config.agents.iter().any(|a| a.name == "walker"));
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = ScenarioConfig::from_json("{\n  \"agents\": [,]\n}").unwrap_err();
        match err {
            ConfigError::Parse { line, column, message } => {
                assert_eq!((line, column), (2, 14));
                assert!(!message.contains("line"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_object_is_an_empty_scenario() {
        let config = ScenarioConfig::from_json("{}").unwrap();
        assert!(config.agents.is_empty());
        assert_eq!(config.tick_mode, TickMode::Manual);
    }

    #[test]
    fn cross_references_are_checked() {
        let text = r#"{
            "groups": [{"name": "b", "parent": "a"}, {"name": "a"}],
            "agents": [
                {"name": "x", "architecture": "reactive", "groups": ["nope"]},
                {"name": "x", "architecture": "reactive"}
            ],
            "environment": {"facts": [{"key": "k", "value": 1, "visibility": {"agents": ["ghost"]}}]}
        }"#;
        let ConfigError::Invalid(diags) = ScenarioConfig::from_json(text).unwrap_err() else {
            panic!("expected diagnostics");
        };
        let fields: Vec<&str> = diags.iter().map(|d| d.field.as_str()).collect();
        assert_eq!(
            fields,
            ["groups[0].parent", "agents[0].groups[0]", "agents[1].name", "environment.facts[0].visibility[0]"]
        );
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(matches!(ScenarioConfig::from_json(r#"{"agentz": []}"#), Err(ConfigError::Parse { .. })));
    }
}
