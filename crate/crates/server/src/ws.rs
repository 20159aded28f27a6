//! The event channel: one task per socket connection.
//!
//! A connection only enqueues commands and forwards published frames; it
//! never touches the world. Subscribing to an unknown agent earns an
//! error frame and the connection is closed.

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use tokio::sync::broadcast::error::RecvError;

use crate::command::{Command, Reply};
use crate::error::{ApiError, ErrorBody};
use crate::executor::Query;
use crate::frames::{ClientFrame, Frame, Scope, Subscriptions};
use crate::routes::AppState;

pub async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, state))
}

enum Flow {
    Continue,
    Close,
}

async fn send(socket: &mut WebSocket, frame: &Frame) -> bool {
    let text = serde_json::to_string(frame).expect("frames serialize");
    socket.send(Message::Text(text.into())).await.is_ok()
}

async fn connection(mut socket: WebSocket, state: AppState) {
    let mut frames = state.frames.subscribe();
    let mut shutdown = state.shutdown.clone();
    let mut subs = Subscriptions::default();
    loop {
        tokio::select! {
            _ = shutdown.changed() => break,
            incoming = socket.recv() => {
                let text = match incoming {
                    Some(Ok(Message::Text(text))) => text,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                match inbound(&mut socket, &state, &mut subs, text.as_str()).await {
                    Some(Flow::Continue) => {}
                    Some(Flow::Close) | None => break,
                }
            }
            batch = frames.recv() => match batch {
                Ok(batch) => {
                    let mut open = true;
                    for frame in subs.select_batch(&batch) {
                        if !send(&mut socket, frame).await {
                            open = false;
                            break;
                        }
                    }
                    if !open {
                        break;
                    }
                }
                Err(RecvError::Lagged(skipped)) => {
                    let err = ApiError::new(0, "lagged", "this connection fell behind; frames were skipped")
                        .detail(serde_json::json!({ "skipped": skipped }));
                    if !send(&mut socket, &Frame::Error(err.body)).await {
                        break;
                    }
                }
                Err(RecvError::Closed) => break,
            }
        }
    }
    for &agent in &subs.agents {
        state.unwatch(agent);
    }
    let _ = socket.send(Message::Close(None)).await;
}

/// Handles one inbound text frame. `None` means the socket is gone.
async fn inbound(socket: &mut WebSocket, state: &AppState, subs: &mut Subscriptions, text: &str) -> Option<Flow> {
    let frame: ClientFrame = match serde_json::from_str(text) {
        Ok(frame) => frame,
        Err(e) => {
            let err = ApiError::bad_request("malformed-frame", e.to_string());
            return send(socket, &Frame::Error(err.body)).await.then_some(Flow::Continue);
        }
    };
    let (reply_frame, flow) = match frame {
        ClientFrame::Subscribe { scope } => match subscribe(state, subs, &scope).await {
            Ok(()) => (Frame::Subscribed { scope }, Flow::Continue),
            // A scope that does not parse is a client mistake; one naming a
            // missing agent ends the connection.
            Err(body) if body.code == "invalid-scope" => (Frame::Error(body), Flow::Continue),
            Err(body) => (Frame::Error(body), Flow::Close),
        },
        ClientFrame::Unsubscribe { scope } => match scope.parse::<Scope>() {
            Ok(parsed) => {
                if subs.remove(parsed) {
                    if let Scope::Agent(agent) = parsed {
                        state.unwatch(agent);
                    }
                }
                (Frame::Unsubscribed { scope }, Flow::Continue)
            }
            Err(msg) => (Frame::Error(ApiError::bad_request("invalid-scope", msg).body), Flow::Continue),
        },
        ClientFrame::SendMessage { command_id, sender, message } => {
            let reply = state.command(command_id.clone(), Command::SendMessage { sender, message }).await;
            (ack(command_id, "send-message", reply), Flow::Continue)
        }
        ClientFrame::EnvAction { command_id, action } => {
            let issuer = action.issuer;
            let reply = state.command(command_id.clone(), Command::EnvAction(action)).await;
            if reply.is_success() && !reply.replayed {
                subs.await_outcome(issuer);
            }
            (ack(command_id, "env-action", reply), Flow::Continue)
        }
    };
    send(socket, &reply_frame).await.then_some(flow)
}

fn ack(command_id: Option<String>, command: &str, reply: Reply) -> Frame {
    Frame::Ack {
        command_id,
        command: command.to_owned(),
        status: reply.status,
        result: reply.body,
        replayed: reply.replayed,
    }
}

async fn subscribe(state: &AppState, subs: &mut Subscriptions, raw: &str) -> Result<(), ErrorBody> {
    let scope: Scope = raw.parse().map_err(|msg| ApiError::bad_request("invalid-scope", msg).body)?;
    if let Scope::Agent(agent) = scope {
        if subs.agents.contains(&agent) {
            return Ok(());
        }
        let reply = state.query(Query::Watch(agent)).await;
        if !reply.is_success() {
            return Err(serde_json::from_value(reply.body).unwrap_or_else(|_| ErrorBody {
                code: "unknown-agent".into(),
                message: format!("no agent {agent}"),
                detail: serde_json::Value::Null,
            }));
        }
    }
    subs.add(scope);
    Ok(())
}
