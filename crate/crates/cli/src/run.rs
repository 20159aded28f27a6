//! Headless runs.

use std::io::Write;
use std::path::Path;

use hecate_core::persistence::{FileBackend, StorageBackend};
use hecate_core::Simulation;

use crate::args::RunArgs;
use crate::{load, Failure};

pub fn run(args: RunArgs) -> Result<(), Failure> {
    let (mut sim, _) = load::world(&args.world, args.scenario().map(|p| p.as_path()))?;
    let mut backend = match &args.world.data_dir {
        Some(dir) => Some(FileBackend::new(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?),
        None => None,
    };
    let mut saved_at = None;
    for _ in 0..args.ticks {
        sim.tick().map_err(|e| Failure::Runtime(format!("tick {}: {e}", sim.world().current_tick())))?;
        let tick = sim.world().current_tick();
        if let (Some(every), Some(backend)) = (args.world.snapshot_every, backend.as_mut()) {
            if tick % every == 0 {
                save(&sim, backend)?;
                saved_at = Some(tick);
            }
        }
    }
    if let Some(backend) = backend.as_mut() {
        if saved_at != Some(sim.world().current_tick()) {
            save(&sim, backend)?;
        }
    }
    let mut text = serde_json::to_string_pretty(&sim.metrics(args.timings)).expect("metrics serialize");
    text.push('\n');
    write_metrics(args.metrics.as_deref(), &text)
}

fn save(sim: &Simulation, backend: &mut FileBackend) -> Result<(), Failure> {
    let snapshot = sim.snapshot().map_err(|e| Failure::Runtime(e.to_string()))?;
    let locator = backend.save(&snapshot).map_err(|e| Failure::Runtime(format!("saving snapshot: {e}")))?;
    tracing::info!(%locator, "snapshot saved");
    Ok(())
}

fn write_metrics(dest: Option<&Path>, text: &str) -> Result<(), Failure> {
    let failed = |e: std::io::Error| Failure::Runtime(format!("writing metrics: {e}"));
    match dest {
        Some(path) if path != Path::new("-") => std::fs::write(path, text).map_err(failed),
        _ => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).and_then(|()| out.flush()).map_err(failed)
        }
    }
}
