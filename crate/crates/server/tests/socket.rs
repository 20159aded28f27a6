mod common;

use common::Harness;
use serde_json::{json, Value};

fn of_type<'a>(frames: &'a [Value], kind: &str) -> Vec<&'a Value> {
    frames.iter().filter(|f| f["type"] == kind).collect()
}

async fn two_agents(h: &Harness) -> (String, String) {
    let a = h.spawn(json!({"name": "a", "architecture": "reactive"})).await;
    let b = h.spawn(json!({"name": "b", "architecture": "reactive"})).await;
    h.tick(1).await;
    (a, b)
}

#[tokio::test(flavor = "multi_thread")]
async fn world_subscribers_see_entity_creation() {
    let h = Harness::empty().await;
    let mut socket = h.socket().await;
    assert_eq!(socket.subscribe("world").await, json!({"type": "subscribed", "scope": "world"}));
    let id = h.spawn(json!({"name": "a", "architecture": "reactive"})).await;
    // Queued between ticks, the event is dispatched at the start of the
    // second tick after it.
    h.tick(2).await;
    let first = socket.until_tick().await;
    assert!(!first.iter().any(|f| f["event"]["eventKind"] == "entity-created"), "{first:?}");
    let frames = socket.until_tick().await;
    assert_eq!(frames.last().unwrap(), &json!({"type": "tick", "tick": 1}));
    let created = frames.iter().find(|f| f["event"]["eventKind"] == "entity-created").expect("entity-created frame");
    assert_eq!(created["event"]["sourceEntity"], json!(id));
}

#[tokio::test(flavor = "multi_thread")]
async fn agent_subscribers_get_each_message_once() {
    let h = Harness::empty().await;
    let (a, b) = two_agents(&h).await;
    let mut socket = h.socket().await;
    assert_eq!(socket.subscribe(&b).await["type"], "subscribed");
    let sent = h
        .post(
            &format!("/agents/{a}/messages"),
            json!({"target": {"agent": b}, "performative": "inform", "payload": {"n": 7}}),
        )
        .await;
    assert_eq!(sent.status, 202);
    h.tick(1).await;
    let frames = socket.until_tick().await;
    let messages = of_type(&frames, "message");
    assert_eq!(messages.len(), 1, "{frames:?}");
    assert_eq!(messages[0]["agent"], json!(b));
    assert_eq!(messages[0]["envelope"]["payload"], json!({"n": 7}));
    h.tick(1).await;
    assert!(of_type(&socket.until_tick().await, "message").is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_agents_close_the_connection() {
    let h = Harness::empty().await;
    let mut socket = h.socket().await;
    let frame = socket.subscribe("42v0").await;
    assert_eq!((frame["type"].as_str(), frame["code"].as_str()), (Some("error"), Some("unknown-agent")));
    assert!(socket.next().await.is_none());
}

#[tokio::test(flavor = "multi_thread")]
async fn env_actions_are_acknowledged_then_resolved() {
    let h = Harness::grid().await;
    h.tick(1).await;
    let beacon = h.agent_id("beacon").await;
    let mut socket = h.socket().await;
    socket
        .send(json!({
            "type": "env-action",
            "commandId": "move-1",
            "action": {"issuer": beacon, "kind": {"move": {"dx": 1, "dy": 0}}}
        }))
        .await;
    let ack = socket.next().await.unwrap();
    assert_eq!(ack["type"], "ack");
    assert_eq!((ack["commandId"].as_str(), ack["status"].as_u64()), (Some("move-1"), Some(202)));
    h.tick(1).await;
    let frames = socket.until_tick().await;
    let outcomes = of_type(&frames, "outcome");
    assert_eq!(outcomes.len(), 1, "{frames:?}");
    assert_eq!(outcomes[0]["outcome"]["issuer"], json!(beacon));
    assert_eq!(outcomes[0]["outcome"]["status"], "applied");

    // The same command id replays the ack and queues nothing.
    socket
        .send(json!({
            "type": "env-action",
            "commandId": "move-1",
            "action": {"issuer": beacon, "kind": {"move": {"dx": 1, "dy": 0}}}
        }))
        .await;
    let replay = socket.next().await.unwrap();
    assert_eq!(replay["replayed"], true);
    assert_eq!(replay["result"], ack["result"]);
}

#[tokio::test(flavor = "multi_thread")]
async fn watched_agents_stream_percepts_every_tick() {
    let h = Harness::grid().await;
    let walker = h.agent_id("walker").await;
    h.tick(1).await;
    let mut socket = h.socket().await;
    socket.subscribe(&walker).await;
    h.tick(10).await;
    let mut ticks = Vec::new();
    for _ in 0..10 {
        let frames = socket.until_tick().await;
        let percepts = of_type(&frames, "percept");
        assert_eq!(percepts.len(), 1, "{frames:?}");
        assert_eq!(percepts[0]["agent"], json!(walker));
        assert!(!percepts[0]["percepts"].as_array().unwrap().is_empty());
        ticks.push(percepts[0]["tick"].as_u64().unwrap());
    }
    assert_eq!(ticks, (1..=10).collect::<Vec<_>>());
}

#[tokio::test(flavor = "multi_thread")]
async fn unsubscribed_connections_get_nothing_for_that_agent() {
    let h = Harness::grid().await;
    let walker = h.agent_id("walker").await;
    h.tick(1).await;
    let mut socket = h.socket().await;
    socket.subscribe(&walker).await;
    socket.send(json!({"type": "unsubscribe", "scope": walker})).await;
    assert_eq!(socket.next().await.unwrap()["type"], "unsubscribed");
    socket.subscribe("world").await;
    h.tick(1).await;
    let frames = socket.until_tick().await;
    assert!(of_type(&frames, "percept").is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn messages_can_be_sent_over_the_socket() {
    let h = Harness::empty().await;
    let (a, b) = two_agents(&h).await;
    let mut socket = h.socket().await;
    socket
        .send(json!({
            "type": "send-message",
            "commandId": "m-1",
            "sender": a,
            "message": {"target": {"agent": b}, "performative": "inform"}
        }))
        .await;
    let ack = socket.next().await.unwrap();
    assert_eq!((ack["type"].as_str(), ack["status"].as_u64()), (Some("ack"), Some(202)));
    assert_eq!(ack["result"]["recipients"], json!([b]));
    socket
        .send(json!({
            "type": "send-message",
            "sender": a,
            "message": {"target": {"agent": "99v0"}, "performative": "inform"}
        }))
        .await;
    let failed = socket.next().await.unwrap();
    assert_eq!((failed["status"].as_u64(), failed["result"]["code"].as_str()), (Some(404), Some("unknown-target")));
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_frames_leave_the_connection_open() {
    let h = Harness::empty().await;
    let mut socket = h.socket().await;
    socket.send(json!({"type": "dance"})).await;
    let err = socket.next().await.unwrap();
    assert_eq!((err["type"].as_str(), err["code"].as_str()), (Some("error"), Some("malformed-frame")));
    socket.send(json!({"type": "subscribe", "scope": "nowhere"})).await;
    let scope = socket.next().await.unwrap();
    assert_eq!(scope["code"], "invalid-scope");
    assert_eq!(socket.subscribe("world").await["type"], "subscribed");
}

#[tokio::test(flavor = "multi_thread")]
async fn shutdown_closes_open_sockets() {
    let h = Harness::empty().await;
    let mut socket = h.socket().await;
    socket.subscribe("world").await;
    h.server.shutdown().await.unwrap();
    assert!(socket.next().await.is_none());
}
