//! HTTP and WebSocket front end for one simulated world.
//!
//! All REST endpoints live under `/v1`; the event channel is the socket at
//! `/v1/events`. Requests never touch the world directly: they become
//! commands on the executor's queue (see [`executor`]), which applies them
//! between ticks, so no client ever observes a half-finished tick. A
//! mutating request may carry an `X-Command-Id` header; repeating the id
//! returns the first response without executing anything.
//!
//! ```no_run
//! # async fn demo() -> std::io::Result<()> {
//! use hecate_core::{scenario::TickMode, Simulation};
//! use hecate_server::{start, ServerConfig};
//!
//! let server = start(Simulation::empty(0), TickMode::Manual, &ServerConfig::default()).await?;
//! println!("listening on {}", server.local_addr());
//! server.shutdown().await?;
//! # Ok(())
//! # }
//! ```

pub mod command;
pub mod error;
pub mod executor;
pub mod frames;
pub mod routes;
pub mod schema;
pub mod views;
mod ws;

use std::io;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::mpsc;

use hecate_core::persistence::{FileBackend, MemoryBackend, StorageBackend};
use hecate_core::scenario::TickMode;
use hecate_core::Simulation;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, oneshot, watch};
use tokio::task::JoinHandle;

pub use command::{COMMAND_ID_HEADER, REPLAYED_HEADER};
pub use error::{ApiError, ErrorBody};
pub use executor::{Executor, ExecutorOptions};
pub use routes::{router, AppState};

pub const ENV_ADDR: &str = "HECATE_ADDR";
pub const ENV_PORT: &str = "HECATE_PORT";
pub const ENV_DATA_DIR: &str = "HECATE_DATA_DIR";
pub const ENV_LOG_LEVEL: &str = "HECATE_LOG_LEVEL";

pub const DEFAULT_PORT: u16 = 7878;

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub addr: SocketAddr,
    /// Snapshots go here as files; without it they stay in memory.
    pub data_dir: Option<PathBuf>,
    pub snapshot_every: Option<u64>,
    /// Save a snapshot when the server shuts down.
    pub final_snapshot: bool,
    pub log_level: String,
    /// Tick batches a slow connection may fall behind before it skips.
    pub frame_capacity: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            addr: SocketAddr::new(IpAddr::V4(Ipv4Addr::LOCALHOST), DEFAULT_PORT),
            data_dir: None,
            snapshot_every: None,
            final_snapshot: false,
            log_level: "info".into(),
            frame_capacity: 1024,
        }
    }
}

impl ServerConfig {
    /// Defaults overridden by `HECATE_ADDR`, `HECATE_PORT`,
    /// `HECATE_DATA_DIR` and `HECATE_LOG_LEVEL`.
    pub fn from_env() -> Result<Self, String> {
        Self::from_vars(|key| std::env::var(key).ok())
    }

    pub fn from_vars(var: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        let mut config = Self::default();
        if let Some(addr) = var(ENV_ADDR) {
            config.addr.set_ip(addr.parse().map_err(|e| format!("{ENV_ADDR}: {e}"))?);
        }
        if let Some(port) = var(ENV_PORT) {
            config.addr.set_port(port.parse().map_err(|e| format!("{ENV_PORT}: {e}"))?);
        }
        if let Some(dir) = var(ENV_DATA_DIR).filter(|d| !d.is_empty()) {
            config.data_dir = Some(dir.into());
            config.final_snapshot = true;
        }
        if let Some(level) = var(ENV_LOG_LEVEL) {
            config.log_level = level;
        }
        Ok(config)
    }
}

/// A running server. Dropping it stops the HTTP side; the executor then
/// winds down once the last request has finished.
pub struct Server {
    addr: SocketAddr,
    jobs: mpsc::Sender<executor::Job>,
    stop: watch::Sender<bool>,
    serve: JoinHandle<io::Result<()>>,
    executor: Option<std::thread::JoinHandle<()>>,
}

/// Binds `config.addr` and starts serving `sim`.
pub async fn start(sim: Simulation, mode: TickMode, config: &ServerConfig) -> io::Result<Server> {
    let backend: Box<dyn StorageBackend> = match &config.data_dir {
        Some(dir) => Box::new(FileBackend::new(dir)?),
        None => Box::new(MemoryBackend::new()),
    };
    let (frames, _) = broadcast::channel(config.frame_capacity.max(1));
    let (jobs, queue) = mpsc::channel();
    let options =
        ExecutorOptions { mode, backend, snapshot_every: config.snapshot_every, final_snapshot: config.final_snapshot };
    let listener = TcpListener::bind(config.addr).await?;
    let addr = listener.local_addr()?;
    let executor = Executor::new(sim, options, frames.clone()).spawn(queue)?;
    let (stop, stopped) = watch::channel(false);
    let app = router(AppState::new(jobs.clone(), frames, stopped.clone()));
    let serve = tokio::spawn(async move {
        let mut stopped = stopped;
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = stopped.wait_for(|s| *s).await;
            })
            .await
    });
    tracing::info!(%addr, "listening");
    Ok(Server { addr, jobs, stop, serve, executor: Some(executor) })
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// `http://<addr>`
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting requests, closes sockets, lets in-flight requests
    /// finish and stops the executor. Returns the final snapshot's locator
    /// when one was configured.
    pub async fn shutdown(mut self) -> io::Result<Option<String>> {
        let _ = self.stop.send(true);
        match (&mut self.serve).await {
            Ok(result) => result?,
            Err(e) => return Err(io::Error::other(e)),
        }
        let (tx, rx) = oneshot::channel();
        let locator = if self.jobs.send(executor::Job::Shutdown(tx)).is_ok() { rx.await.unwrap_or(None) } else { None };
        if let Some(handle) = self.executor.take() {
            tokio::task::spawn_blocking(move || handle.join())
                .await
                .map_err(io::Error::other)?
                .map_err(|_| io::Error::other("executor thread panicked"))?;
        }
        Ok(locator)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.stop.send(true);
    }
}

/// The guide's server chapter, compiled so its example runs as a test.
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/server.md")]
mod guide {}
