use hecate_core::agent::AgentError;
use hecate_core::ecs::EcsError;
use hecate_core::messaging::MessagingError;
use hecate_core::organization::OrganizationError;
use hecate_core::persistence::PersistenceError;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Body of every error response and error frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ErrorBody {
    /// Stable, kebab-case identifier such as `illegal-transition`.
    pub code: String,
    pub message: String,
    /// Structured context: diagnostics, the violated policy, ...
    #[serde(default)]
    pub detail: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: u16,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { code: code.to_owned(), message: message.into(), detail: Value::Null } }
    }

    pub fn detail(mut self, detail: Value) -> Self {
        self.body.detail = detail;
        self
    }

    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(400, code, message)
    }

    pub fn not_found(code: &str, message: impl Into<String>) -> Self {
        Self::new(404, code, message)
    }

    pub fn conflict(code: &str, message: impl Into<String>) -> Self {
        Self::new(409, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(500, "internal", message)
    }

    /// A body that failed to deserialize. Syntax errors are the client's
    /// malformed request; well-formed JSON of the wrong shape is
    /// unprocessable.
    pub fn from_json(err: &serde_json::Error, code: &str) -> Self {
        let location = json!({"line": err.line(), "column": err.column()});
        if err.is_data() {
            Self::new(422, code, err.to_string()).detail(location)
        } else {
            Self::bad_request("malformed-json", err.to_string()).detail(location)
        }
    }
}

impl From<EcsError> for ApiError {
    fn from(err: EcsError) -> Self {
        match err {
            EcsError::StaleEntity(id) => Self::not_found("unknown-entity", format!("no live entity {id}")),
            EcsError::CapacityExhausted { .. } => Self::new(503, "capacity-exhausted", err.to_string()),
            other => Self::internal(other.to_string()),
        }
    }
}

impl From<AgentError> for ApiError {
    fn from(err: AgentError) -> Self {
        let message = err.to_string();
        match err {
            AgentError::InvalidSpec(diags) => Self::new(422, "invalid-spec", message).detail(json!(diags)),
            AgentError::IllegalTransition { from, to } => {
                Self::conflict("illegal-transition", message).detail(json!({"from": from, "to": to}))
            }
            AgentError::NotAnAgent(_) | AgentError::Ecs(EcsError::StaleEntity(_)) => {
                Self::not_found("unknown-agent", message)
            }
            AgentError::WrongArchitecture { .. } => Self::conflict("wrong-architecture", message),
            AgentError::Organization(e) => e.into(),
            AgentError::Ecs(e) => e.into(),
        }
    }
}

impl From<OrganizationError> for ApiError {
    fn from(err: OrganizationError) -> Self {
        let (code, message) = (err.code(), err.to_string());
        match err {
            OrganizationError::PolicyViolation { policy } => {
                Self::conflict(code, message).detail(json!({ "policy": policy }))
            }
            OrganizationError::RoleConflict { requested, existing } => {
                Self::conflict(code, message).detail(json!({"requested": requested, "existing": existing}))
            }
            OrganizationError::UnknownGroup(_) => Self::not_found(code, message),
            OrganizationError::Ecs(EcsError::StaleEntity(_)) => Self::not_found("unknown-agent", message),
            OrganizationError::NotAnAgent(_) | OrganizationError::InvalidPolicy => Self::new(422, code, message),
            OrganizationError::CycleDetected(_)
            | OrganizationError::DuplicateGroup(_)
            | OrganizationError::NotAMember { .. }
            | OrganizationError::RoleNotHeld { .. } => Self::conflict(code, message),
            OrganizationError::Ecs(e) => e.into(),
        }
    }
}

impl From<MessagingError> for ApiError {
    fn from(err: MessagingError) -> Self {
        let (code, message) = (err.code(), err.to_string());
        match err {
            MessagingError::UnknownSender(_) | MessagingError::UnknownTarget(_) => Self::not_found(code, message),
            MessagingError::NoBroker => Self::internal(message),
            MessagingError::Ecs(e) => e.into(),
        }
    }
}

impl From<PersistenceError> for ApiError {
    fn from(err: PersistenceError) -> Self {
        let (code, message) = (err.code(), err.to_string());
        match err {
            PersistenceError::Io(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Self::not_found("unknown-snapshot", message)
            }
            PersistenceError::Io(_) | PersistenceError::Ecs(_) => Self::new(500, code, message),
            _ => Self::new(422, code, message),
        }
    }
}
