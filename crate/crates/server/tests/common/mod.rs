#![allow(dead_code)]

use std::time::Duration;

use futures::{SinkExt, StreamExt};
use hecate_core::scenario::{ScenarioConfig, TickMode};
use hecate_core::Simulation;
use hecate_server::{start, Server, ServerConfig, COMMAND_ID_HEADER, REPLAYED_HEADER};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

pub struct Harness {
    pub server: Server,
    pub http: reqwest::Client,
}

pub fn local_config() -> ServerConfig {
    ServerConfig { addr: "127.0.0.1:0".parse().unwrap(), ..ServerConfig::default() }
}

pub struct Response {
    pub status: u16,
    pub body: Value,
    pub replayed: bool,
}

impl Harness {
    pub async fn with(sim: Simulation, config: ServerConfig) -> Self {
        let server = start(sim, TickMode::Manual, &config).await.unwrap();
        Self { server, http: reqwest::Client::new() }
    }

    pub async fn empty() -> Self {
        Self::with(Simulation::empty(0), local_config()).await
    }

    pub async fn grid() -> Self {
        Self::with(Simulation::from_config(&ScenarioConfig::grid_bdi(), None).unwrap(), local_config()).await
    }

    fn url(&self, path: &str) -> String {
        format!("{}/v1{path}", self.server.base_url())
    }

    async fn send(&self, req: reqwest::RequestBuilder) -> Response {
        let res = req.send().await.unwrap();
        let status = res.status().as_u16();
        let replayed = res.headers().get(REPLAYED_HEADER).is_some();
        let text = res.text().await.unwrap();
        let body = if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap() };
        Response { status, body, replayed }
    }

    pub async fn get(&self, path: &str) -> Response {
        self.send(self.http.get(self.url(path))).await
    }

    pub async fn post(&self, path: &str, body: Value) -> Response {
        self.send(self.http.post(self.url(path)).json(&body)).await
    }

    pub async fn post_raw(&self, path: &str, body: &'static str) -> Response {
        self.send(self.http.post(self.url(path)).header("content-type", "application/json").body(body)).await
    }

    pub async fn post_once(&self, path: &str, body: Value, command_id: &str) -> Response {
        self.send(self.http.post(self.url(path)).header(COMMAND_ID_HEADER, command_id).json(&body)).await
    }

    pub async fn put(&self, path: &str, body: Value) -> Response {
        self.send(self.http.put(self.url(path)).json(&body)).await
    }

    pub async fn delete(&self, path: &str) -> Response {
        self.send(self.http.delete(self.url(path))).await
    }

    pub async fn tick(&self, steps: u64) -> Value {
        let res = self.post("/world/tick", json!({ "steps": steps })).await;
        assert_eq!(res.status, 200, "{}", res.body);
        res.body
    }

    /// Spawns and returns the new agent's id.
    pub async fn spawn(&self, spec: Value) -> String {
        let res = self.post("/agents", spec).await;
        assert_eq!(res.status, 201, "{}", res.body);
        res.body["id"].as_str().unwrap().to_owned()
    }

    pub async fn agent_id(&self, name: &str) -> String {
        let agents = self.get("/agents").await.body;
        agents
            .as_array()
            .unwrap()
            .iter()
            .find(|a| a["name"] == name)
            .map(|a| a["id"].as_str().unwrap().to_owned())
            .unwrap()
    }

    pub async fn socket(&self) -> Socket {
        let url = format!("ws://{}/v1/events", self.server.local_addr());
        let (stream, _) = tokio_tungstenite::connect_async(url).await.unwrap();
        Socket(stream)
    }
}

pub struct Socket(pub WebSocketStream<MaybeTlsStream<TcpStream>>);

impl Socket {
    pub async fn send(&mut self, frame: Value) {
        self.0.send(Message::Text(frame.to_string().into())).await.unwrap();
    }

    /// Next text frame, or `None` once the server closes the socket.
    pub async fn next(&mut self) -> Option<Value> {
        loop {
            let msg = tokio::time::timeout(Duration::from_secs(5), self.0.next()).await.expect("no frame within 5 s");
            match msg {
                Some(Ok(Message::Text(text))) => return Some(serde_json::from_str(&text).unwrap()),
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return None,
                Some(Ok(_)) => continue,
            }
        }
    }

    /// Frames up to and including the next `tick` frame.
    pub async fn until_tick(&mut self) -> Vec<Value> {
        let mut out = Vec::new();
        loop {
            let frame = self.next().await.expect("socket closed");
            let done = frame["type"] == "tick";
            out.push(frame);
            if done {
                return out;
            }
        }
    }

    pub async fn subscribe(&mut self, scope: &str) -> Value {
        self.send(json!({"type": "subscribe", "scope": scope})).await;
        self.next().await.expect("socket closed")
    }
}
