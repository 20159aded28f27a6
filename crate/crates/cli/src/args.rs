use std::net::{IpAddr, Ipv4Addr};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hecate_server::{DEFAULT_PORT, ENV_ADDR, ENV_DATA_DIR, ENV_LOG_LEVEL, ENV_PORT};
use tracing_subscriber::filter::LevelFilter;

#[derive(Debug, Parser)]
#[command(name = "hecate", version, about = "Multi-agent simulation runtime")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Commands,
}

#[derive(Debug, Subcommand)]
pub enum Commands {
    /// Serve one world over REST and WebSocket until interrupted.
    Serve(ServeArgs),
    /// Run a scenario for a number of ticks and write its metrics.
    Run(RunArgs),
}

impl Commands {
    pub fn log_level(&self) -> LevelFilter {
        match self {
            Commands::Serve(a) => a.world.log_level,
            Commands::Run(a) => a.world.log_level,
        }
    }
}

/// Where the world comes from and where its snapshots go.
#[derive(Debug, Clone, Args)]
pub struct WorldArgs {
    /// Scenario file (JSON). Without one the world starts empty.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the scenario's seed.
    #[arg(long, conflicts_with = "restore")]
    pub seed: Option<u64>,
    /// Start from a snapshot: `latest`, a locator in --data-dir, or a file.
    #[arg(long, value_name = "SNAPSHOT", conflicts_with = "config")]
    pub restore: Option<String>,
    /// Directory for snapshot files.
    #[arg(long, value_name = "DIR", env = ENV_DATA_DIR)]
    pub data_dir: Option<PathBuf>,
    /// Save a snapshot whenever the tick counter reaches a multiple of N.
    #[arg(long, value_name = "N", requires = "data_dir", value_parser = clap::value_parser!(u64).range(1..))]
    pub snapshot_every: Option<u64>,
    /// off, error, warn, info, debug or trace.
    #[arg(long, default_value = "info", env = ENV_LOG_LEVEL)]
    pub log_level: LevelFilter,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub world: WorldArgs,
    #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST), env = ENV_ADDR)]
    pub addr: IpAddr,
    /// 0 picks a free port.
    #[arg(long, default_value_t = DEFAULT_PORT, env = ENV_PORT)]
    pub port: u16,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario file, as an alternative to --config.
    #[arg(value_name = "SCENARIO", conflicts_with_all = ["config", "restore"])]
    pub scenario: Option<PathBuf>,
    #[command(flatten)]
    pub world: WorldArgs,
    #[arg(long, default_value_t = 100)]
    pub ticks: u64,
    /// Metrics destination; `-` or nothing means stdout.
    #[arg(long, value_name = "PATH")]
    pub metrics: Option<PathBuf>,
    /// Include wall-clock timings. They differ between runs.
    #[arg(long)]
    pub timings: bool,
}

impl RunArgs {
    pub fn scenario(&self) -> Option<&PathBuf> {
        self.scenario.as_ref().or(self.world.config.as_ref())
    }
}
