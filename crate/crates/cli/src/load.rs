//! Builds the starting world from flags.

use std::path::Path;

use hecate_core::persistence::{FileBackend, StorageBackend};
use hecate_core::runtime::ScenarioError;
use hecate_core::scenario::{ConfigError, ScenarioConfig, TickMode};
use hecate_core::Simulation;

use crate::args::WorldArgs;
use crate::Failure;

/// Reads and validates a scenario file. Parse errors read
/// `path:line:column: message`; each invalid field gets a line of its own.
pub fn scenario(path: &Path) -> Result<ScenarioConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    ScenarioConfig::from_json(&text).map_err(|e| config_failure(path, &e))
}

fn config_failure(path: &Path, err: &ConfigError) -> Failure {
    let path = path.display();
    Failure::Config(match err {
        ConfigError::Parse { line, column, message } => format!("{path}:{line}:{column}: {message}"),
        ConfigError::Invalid(diagnostics) => {
            diagnostics.iter().map(|d| format!("{path}: {d}")).collect::<Vec<_>>().join("\n")
        }
    })
}

/// The world to start with, and the tick mode its scenario asks for.
/// Restored worlds start in manual mode.
pub fn world(args: &WorldArgs, scenario_path: Option<&Path>) -> Result<(Simulation, TickMode), Failure> {
    if let Some(reference) = &args.restore {
        let (bytes, label) = snapshot(reference, args.data_dir.as_deref())?;
        let sim = Simulation::restore(&bytes).map_err(|e| Failure::Config(format!("{label}: {e}")))?;
        tracing::info!(snapshot = %label, tick = sim.world().current_tick(), "restored");
        return Ok((sim, TickMode::Manual));
    }
    let Some(path) = scenario_path else {
        return Ok((Simulation::empty(args.seed.unwrap_or(0)), TickMode::Manual));
    };
    let config = scenario(path)?;
    let sim = Simulation::from_config(&config, args.seed).map_err(|e| match e {
        ScenarioError::Config(e) => config_failure(path, &e),
        other => Failure::Config(format!("{}: {other}", path.display())),
    })?;
    Ok((sim, config.tick_mode))
}

/// Snapshot bytes plus a name for messages.
fn snapshot(reference: &str, data_dir: Option<&Path>) -> Result<(Vec<u8>, String), Failure> {
    let read_err = |what: &str, e: std::io::Error| Failure::Config(format!("{what}: {e}"));
    if reference == "latest" {
        let dir = data_dir.ok_or_else(|| Failure::Config("--restore latest needs --data-dir".into()))?;
        let backend = FileBackend::new(dir).map_err(|e| read_err(&dir.display().to_string(), e))?;
        let locator = backend
            .latest()
            .map_err(|e| read_err(&dir.display().to_string(), e))?
            .ok_or_else(|| Failure::Config(format!("no snapshot in {}", dir.display())))?;
        let bytes = backend.load(&locator).map_err(|e| read_err(&locator, e))?;
        return Ok((bytes, locator));
    }
    let path = Path::new(reference);
    if path.is_file() {
        return std::fs::read(path).map(|b| (b, reference.to_owned())).map_err(|e| read_err(reference, e));
    }
    match data_dir {
        Some(dir) => {
            let backend = FileBackend::new(dir).map_err(|e| read_err(&dir.display().to_string(), e))?;
            let bytes = backend.load(reference).map_err(|e| read_err(reference, e))?;
            Ok((bytes, reference.to_owned()))
        }
        None => Err(Failure::Config(format!("no snapshot file {reference}"))),
    }
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use tracing_subscriber::filter::LevelFilter;

    use super::*;

    fn args() -> WorldArgs {
        WorldArgs {
            config: None,
            seed: None,
            restore: None,
            data_dir: None,
            snapshot_every: None,
            log_level: LevelFilter::OFF,
        }
    }

    fn message(f: Failure) -> String {
        assert_eq!(f.exit_code(), 2);
        f.to_string()
    }

    #[test]
    fn parse_errors_name_file_line_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{\n  \"seed\": 1,\n  oops\n}").unwrap();
        let msg = message(scenario(&path).unwrap_err());
        assert!(msg.starts_with(&format!("{}:3:3: ", path.display())), "{msg}");
    }

    #[test]
    fn invalid_fields_get_a_line_each() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        std::fs::write(&path, r#"{"agents": [{"name": "a", "architecture": "bdi", "autonomyLevel": 2}]}"#).unwrap();
        let msg = message(scenario(&path).unwrap_err());
        assert!(msg.lines().all(|l| l.starts_with(&format!("{}: agents[0]", path.display()))), "{msg}");
    }

    #[test]
    fn missing_files_are_config_errors() {
        message(scenario(&PathBuf::from("/nonexistent/s.json")).unwrap_err());
        let restore = WorldArgs { restore: Some("latest".into()), ..args() };
        assert!(message(world(&restore, None).unwrap_err()).contains("--data-dir"));
    }

    #[test]
    fn no_scenario_means_an_empty_world() {
        let (sim, mode) = world(&WorldArgs { seed: Some(9), ..args() }, None).unwrap();
        assert_eq!((sim.world().entity_count(), sim.world().seed(), mode), (0, 9, TickMode::Manual));
    }

    #[test]
    fn snapshots_restore_from_files_and_directories() {
        let dir = tempfile::tempdir().unwrap();
        let mut sim = Simulation::from_config(&ScenarioConfig::grid_bdi(), None).unwrap();
        sim.run(3).unwrap();
        let mut backend = FileBackend::new(dir.path()).unwrap();
        let locator = backend.save(&sim.snapshot().unwrap()).unwrap();
        let in_dir = WorldArgs { data_dir: Some(dir.path().into()), ..args() };
        for reference in ["latest".to_owned(), locator.clone(), dir.path().join(&locator).display().to_string()] {
            let restore = WorldArgs { restore: Some(reference), ..in_dir.clone() };
            let (restored, _) = world(&restore, None).unwrap();
            assert_eq!(restored.snapshot().unwrap(), sim.snapshot().unwrap());
        }
        std::fs::write(dir.path().join(&locator), b"{}").unwrap();
        let corrupt = WorldArgs { restore: Some(locator), ..in_dir };
        message(world(&corrupt, None).unwrap_err());
    }
}
