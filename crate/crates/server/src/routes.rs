//! REST handlers. Each one parses its input, hands a command or query to
//! the executor and turns the reply into a response.

use std::collections::BTreeSet;
use std::sync::mpsc;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query as QueryParams, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use hecate_core::agent::{AgentSpec, AgentState};
use hecate_core::environment::ActionDescriptor;
use hecate_core::messaging::OutgoingMessage;
use hecate_core::organization::RoleRef;
use hecate_core::scenario::{FactVisibility, GroupConfig};
use hecate_core::EntityId;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::{broadcast, oneshot, watch};

use crate::command::{
    Command, CommandEnvelope, Reply, SnapshotRequest, TickControl, COMMAND_ID_HEADER, REPLAYED_HEADER,
};
use crate::error::ApiError;
use crate::executor::{Job, Query};
use crate::frames::Batch;
use crate::{schema, ws};

/// Handles shared by every request and connection.
#[derive(Clone)]
pub struct AppState {
    pub(crate) jobs: mpsc::Sender<Job>,
    pub(crate) frames: broadcast::Sender<Arc<Batch>>,
    pub(crate) shutdown: watch::Receiver<bool>,
}

impl AppState {
    pub fn new(
        jobs: mpsc::Sender<Job>,
        frames: broadcast::Sender<Arc<Batch>>,
        shutdown: watch::Receiver<bool>,
    ) -> Self {
        Self { jobs, frames, shutdown }
    }

    async fn ask(&self, job: impl FnOnce(oneshot::Sender<Reply>) -> Job) -> Reply {
        let (tx, rx) = oneshot::channel();
        if self.jobs.send(job(tx)).is_err() {
            return stopped();
        }
        rx.await.unwrap_or_else(|_| stopped())
    }

    pub async fn command(&self, command_id: Option<String>, command: Command) -> Reply {
        let envelope = CommandEnvelope::new(command_id, command);
        self.ask(|tx| Job::Command(envelope, tx)).await
    }

    pub async fn query(&self, query: Query) -> Reply {
        self.ask(|tx| Job::Query(query, tx)).await
    }

    /// Fire-and-forget; used when a connection goes away.
    pub(crate) fn unwatch(&self, agent: EntityId) {
        let (tx, _) = oneshot::channel();
        let _ = self.jobs.send(Job::Query(Query::Unwatch(agent), tx));
    }
}

fn stopped() -> Reply {
    ApiError::new(503, "executor-stopped", "the world executor is not running").into()
}

impl IntoResponse for Reply {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let mut response = (status, Json(self.body)).into_response();
        if self.replayed {
            response.headers_mut().insert(REPLAYED_HEADER, HeaderValue::from_static("true"));
        }
        response
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        Reply::from(self).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    let v1 = Router::new()
        .route("/world", get(world))
        .route("/world/metrics", get(metrics))
        .route("/world/control", get(control))
        .route("/world/tick", post(tick))
        .route("/world/run", post(run))
        .route("/world/pause", post(pause))
        .route("/world/snapshot", post(take_snapshot))
        .route("/world/restore", post(restore))
        .route("/snapshots", get(snapshots))
        .route("/agents", get(agents).post(spawn))
        .route("/agents/{id}", get(agent).delete(terminate))
        .route("/agents/{id}/state", post(set_state))
        .route("/agents/{id}/percepts", get(percepts))
        .route("/agents/{id}/messages", post(send_message))
        .route("/agents/{id}/roles", post(assign_role))
        .route("/agents/{id}/roles/active", post(activate_role))
        .route("/groups", get(groups).post(create_group))
        .route("/groups/{group}", get(group))
        .route("/groups/{group}/members", post(join_group))
        .route("/groups/{group}/members/{agent}", axum::routing::delete(leave_group))
        .route("/groups/{group}/invites", post(invite))
        .route("/environment/actions", post(env_action))
        .route("/environment/facts/{key}", put(set_fact))
        .route("/schema", get(schema_index))
        .route("/schema/{name}", get(schema_document))
        .route("/events", get(ws::upgrade));
    Router::new()
        .nest("/v1", v1)
        .fallback(|| async { ApiError::not_found("not-found", "no such endpoint") })
        .method_not_allowed_fallback(|| async { ApiError::new(405, "method-not-allowed", "method not allowed here") })
        .with_state(state)
}

// ---- input helpers ----------------------------------------------------------

fn command_id(headers: &HeaderMap) -> Result<Option<String>, ApiError> {
    headers
        .get(COMMAND_ID_HEADER)
        .map(|v| {
            v.to_str()
                .ok()
                .filter(|s| !s.is_empty())
                .map(str::to_owned)
                .ok_or_else(|| ApiError::bad_request("malformed-command-id", "command ids must be non-empty text"))
        })
        .transpose()
}

fn parse<T: DeserializeOwned>(body: &[u8], code: &str) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::from_json(&e, code))
}

/// Like [`parse`], but an empty body means `T::default()`.
fn parse_or_default<T: DeserializeOwned + Default>(body: &[u8]) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        Ok(T::default())
    } else {
        parse(body, "invalid-body")
    }
}

fn entity(raw: &str) -> Result<EntityId, ApiError> {
    raw.parse().map_err(|e: hecate_core::ecs::ParseEntityIdError| ApiError::bad_request("malformed-id", e.to_string()))
}

async fn dispatch(state: &AppState, headers: &HeaderMap, command: Result<Command, ApiError>) -> Reply {
    match command_id(headers).and_then(|id| command.map(|c| (id, c))) {
        Ok((id, command)) => state.command(id, command).await,
        Err(err) => err.into(),
    }
}

// ---- world ------------------------------------------------------------------

async fn world(State(s): State<AppState>) -> Reply {
    s.query(Query::World).await
}

#[derive(Deserialize)]
struct MetricsParams {
    #[serde(default)]
    timings: bool,
}

async fn metrics(State(s): State<AppState>, QueryParams(p): QueryParams<MetricsParams>) -> Reply {
    s.query(Query::Metrics { timings: p.timings }).await
}

async fn control(State(s): State<AppState>) -> Reply {
    s.query(Query::Control).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepBody {
    #[serde(default = "one")]
    steps: u64,
}

impl Default for StepBody {
    fn default() -> Self {
        Self { steps: 1 }
    }
}

fn one() -> u64 {
    1
}

async fn tick(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> Reply {
    let command =
        parse_or_default::<StepBody>(&body).map(|b| Command::TickControl(TickControl::Step { steps: b.steps }));
    dispatch(&s, &headers, command).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunBody {
    rate: f64,
}

async fn run(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> Reply {
    let command =
        parse::<RunBody>(&body, "invalid-body").map(|b| Command::TickControl(TickControl::Run { rate: b.rate }));
    dispatch(&s, &headers, command).await
}

async fn pause(State(s): State<AppState>, headers: HeaderMap) -> Reply {
    dispatch(&s, &headers, Ok(Command::TickControl(TickControl::Pause))).await
}

async fn take_snapshot(State(s): State<AppState>, headers: HeaderMap) -> Reply {
    dispatch(&s, &headers, Ok(Command::Snapshot(SnapshotRequest::Take))).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RestoreBody {
    locator: String,
}

async fn restore(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> Reply {
    let command = parse::<RestoreBody>(&body, "invalid-body")
        .map(|b| Command::Snapshot(SnapshotRequest::Restore { locator: b.locator }));
    dispatch(&s, &headers, command).await
}

async fn snapshots(State(s): State<AppState>) -> Reply {
    s.query(Query::Snapshots).await
}

// ---- agents -----------------------------------------------------------------

async fn agents(State(s): State<AppState>) -> Reply {
    s.query(Query::Agents).await
}

async fn spawn(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> Reply {
    let command = parse::<AgentSpec>(&body, "invalid-spec").map(|spec| Command::Spawn(Box::new(spec)));
    dispatch(&s, &headers, command).await
}

async fn agent(State(s): State<AppState>, Path(id): Path<String>) -> Reply {
    match entity(&id) {
        Ok(id) => s.query(Query::Agent(id)).await,
        Err(e) => e.into(),
    }
}

async fn percepts(State(s): State<AppState>, Path(id): Path<String>) -> Reply {
    match entity(&id) {
        Ok(id) => s.query(Query::Percepts(id)).await,
        Err(e) => e.into(),
    }
}

/// Terminating twice is fine: terminated to terminated is a no-op.
async fn terminate(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> Reply {
    let command = entity(&id).map(|agent| Command::SetState { agent, target: AgentState::Terminated });
    dispatch(&s, &headers, command).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StateBody {
    target: AgentState,
}

async fn set_state(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<String>, body: Bytes) -> Reply {
    let command = entity(&id).and_then(|agent| {
        parse::<StateBody>(&body, "invalid-body").map(|b| Command::SetState { agent, target: b.target })
    });
    dispatch(&s, &headers, command).await
}

async fn send_message(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<String>, body: Bytes) -> Reply {
    let command = entity(&id).and_then(|sender| {
        parse::<OutgoingMessage>(&body, "invalid-message").map(|message| Command::SendMessage { sender, message })
    });
    dispatch(&s, &headers, command).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RoleBody {
    role: String,
    group: String,
    #[serde(default)]
    capabilities: BTreeSet<String>,
}

async fn assign_role(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<String>, body: Bytes) -> Reply {
    let command = entity(&id).and_then(|agent| {
        parse::<RoleBody>(&body, "invalid-body").map(|b| Command::AssignRole {
            agent,
            role: b.role,
            group: b.group,
            capabilities: b.capabilities.into_iter().collect(),
        })
    });
    dispatch(&s, &headers, command).await
}

async fn activate_role(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<String>, body: Bytes) -> Reply {
    let command = entity(&id)
        .and_then(|agent| parse::<RoleRef>(&body, "invalid-body").map(|role| Command::ActivateRole { agent, role }));
    dispatch(&s, &headers, command).await
}

// ---- groups -----------------------------------------------------------------

async fn groups(State(s): State<AppState>) -> Reply {
    s.query(Query::Groups).await
}

async fn group(State(s): State<AppState>, Path(group): Path<String>) -> Reply {
    s.query(Query::Group(group)).await
}

async fn create_group(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> Reply {
    let command = parse::<GroupConfig>(&body, "invalid-group").map(Command::CreateGroup);
    dispatch(&s, &headers, command).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MemberBody {
    agent: EntityId,
}

async fn join_group(State(s): State<AppState>, headers: HeaderMap, Path(group): Path<String>, body: Bytes) -> Reply {
    let command = parse::<MemberBody>(&body, "invalid-body").map(|b| Command::JoinGroup { agent: b.agent, group });
    dispatch(&s, &headers, command).await
}

async fn leave_group(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path((group, agent)): Path<(String, String)>,
) -> Reply {
    let command = entity(&agent).map(|agent| Command::LeaveGroup { agent, group });
    dispatch(&s, &headers, command).await
}

async fn invite(State(s): State<AppState>, headers: HeaderMap, Path(group): Path<String>, body: Bytes) -> Reply {
    let command = parse::<MemberBody>(&body, "invalid-body").map(|b| Command::Invite { agent: b.agent, group });
    dispatch(&s, &headers, command).await
}

// ---- environment ------------------------------------------------------------

async fn env_action(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> Reply {
    let command = parse::<ActionDescriptor>(&body, "invalid-action").map(Command::EnvAction);
    dispatch(&s, &headers, command).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FactBody {
    value: Value,
    #[serde(default)]
    visibility: FactVisibility,
}

async fn set_fact(State(s): State<AppState>, headers: HeaderMap, Path(key): Path<String>, body: Bytes) -> Reply {
    let command = parse::<FactBody>(&body, "invalid-body").map(|b| Command::SetFact {
        key,
        value: b.value,
        visibility: b.visibility,
    });
    dispatch(&s, &headers, command).await
}

// ---- schemas ----------------------------------------------------------------

async fn schema_index() -> Reply {
    Reply::ok(json!({ "version": schema::VERSION, "schemas": schema::schemas().keys().collect::<Vec<_>>() }))
}

async fn schema_document(Path(name): Path<String>) -> Reply {
    match schema::schemas().remove(name.as_str()) {
        Some(schema) => Reply::ok(schema),
        None => ApiError::not_found("unknown-schema", format!("no schema `{name}`")).into(),
    }
}
