//! Long-running server mode.

use std::io::Write;
use std::net::SocketAddr;

use hecate_server::ServerConfig;

use crate::args::ServeArgs;
use crate::{load, Failure};

pub fn serve(args: ServeArgs) -> Result<(), Failure> {
    let (sim, mode) = load::world(&args.world, args.world.config.as_deref())?;
    let config = ServerConfig {
        addr: SocketAddr::new(args.addr, args.port),
        data_dir: args.world.data_dir.clone(),
        snapshot_every: args.world.snapshot_every,
        final_snapshot: args.world.data_dir.is_some(),
        log_level: args.world.log_level.to_string(),
        ..ServerConfig::default()
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
    runtime.block_on(async {
        let server = hecate_server::start(sim, mode, &config)
            .await
            .map_err(|e| Failure::Runtime(format!("cannot serve on {}: {e}", config.addr)))?;
        println!("listening on {}", server.base_url());
        let _ = std::io::stdout().flush();
        interrupted().await;
        tracing::info!("shutting down");
        let locator = server.shutdown().await.map_err(|e| Failure::Runtime(format!("shutdown: {e}")))?;
        if let Some(locator) = locator {
            println!("saved snapshot {locator}");
        }
        Ok(())
    })
}

/// Ctrl-C, or SIGTERM where there is one.
async fn interrupted() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}
