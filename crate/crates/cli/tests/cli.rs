use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use serde_json::{json, Value};

fn hecate() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hecate"));
    for var in ["HECATE_ADDR", "HECATE_PORT", "HECATE_DATA_DIR", "HECATE_LOG_LEVEL"] {
        cmd.env_remove(var);
    }
    cmd
}

fn grid_scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios/grid_bdi.json")
}

fn run(args: &[&str]) -> Output {
    hecate().arg("run").args(args).args(["--log-level", "warn"]).output().unwrap()
}

fn metrics(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn walker_reaches_the_exit_in_eight_ticks() {
    let scenario = grid_scenario();
    let m = metrics(&run(&[scenario.to_str().unwrap(), "--ticks", "8"]));
    assert_eq!((m["ticks"].as_u64(), m["goalsAchieved"].as_u64()), (Some(8), Some(1)));
    let walker = m["agents"].as_array().unwrap().iter().find(|a| a["name"] == "walker").unwrap();
    assert_eq!(walker["goalsAchieved"], json!(["reach-exit"]));
    let early = metrics(&run(&[scenario.to_str().unwrap(), "--ticks", "7"]));
    assert_eq!(early["goalsAchieved"], 0);
}

#[test]
fn zero_ticks_leave_the_world_untouched() {
    let m = metrics(&run(&["--config", grid_scenario().to_str().unwrap(), "--ticks", "0"]));
    assert_eq!((m["ticks"].as_u64(), m["finalTick"].as_u64()), (Some(0), Some(0)));
    assert_eq!((m["messagesSent"].as_u64(), m["goalsAchieved"].as_u64()), (Some(0), Some(0)));
    // Three agents and the group.
    assert_eq!(m["entities"], 4);
}

#[test]
fn same_seed_gives_identical_metrics_files() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = grid_scenario();
    let files: Vec<_> = ["a.json", "b.json", "c.json"].iter().map(|f| dir.path().join(f)).collect();
    for (file, seed) in files.iter().zip(["7", "7", "8"]) {
        let out = run(&[scenario.to_str().unwrap(), "--seed", seed, "--metrics", file.to_str().unwrap()]);
        assert!(out.status.success() && out.stdout.is_empty());
    }
    let bytes: Vec<_> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
    assert_eq!(bytes[0], bytes[1]);
    assert_ne!(bytes[0], bytes[2]);
    let m: Value = serde_json::from_slice(&bytes[0]).unwrap();
    assert_eq!((m["seed"].as_u64(), m["ticks"].as_u64()), (Some(7), Some(100)));
    assert!(m.get("timings").is_none());
}

#[test]
fn timings_are_opt_in() {
    let m = metrics(&run(&[grid_scenario().to_str().unwrap(), "--ticks", "3", "--timings"]));
    let systems = m["timings"]["systemTimeMs"].as_object().unwrap();
    assert!(systems.contains_key("movement") && systems.contains_key("messaging"), "{systems:?}");
}

#[test]
fn bad_json_is_a_config_error_with_a_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"seed\": 1,\n \"agents\": [}\n").unwrap();
    let path_arg = path.to_str().unwrap();
    for args in [&["run", "--config", path_arg][..], &["serve", "--config", path_arg, "--port", "0"]] {
        let out = hecate().args(args).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.starts_with(&format!("{}:2:13: ", path.display())), "{stderr}");
    }
}

#[test]
fn invalid_scenarios_list_their_fields() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    std::fs::write(
        &path,
        r#"{"agents": [{"name": "a", "architecture": "bdi"}, {"name": "a", "architecture": "bdi"}]}"#,
    )
    .unwrap();
    let out = run(&[path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("agents[1]"));
}

#[test]
fn bad_flags_exit_with_two() {
    assert_eq!(run(&["--ticks", "many"]).status.code(), Some(2));
    assert_eq!(run(&["/no/such/file.json"]).status.code(), Some(2));
}

#[test]
fn periodic_snapshots_restore_into_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().to_str().unwrap();
    let scenario = grid_scenario();
    let straight = metrics(&run(&[scenario.to_str().unwrap(), "--ticks", "20"]));
    let first = run(&[scenario.to_str().unwrap(), "--ticks", "10", "--data-dir", data, "--snapshot-every", "4"]);
    metrics(&first);
    let names: Vec<_> =
        std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(names.len(), 3, "{names:?}");
    let resumed = metrics(&run(&["--restore", "latest", "--data-dir", data, "--ticks", "10"]));
    assert_eq!(resumed["finalTick"], 20);
    for field in ["messagesSent", "messagesDelivered", "goalsAchieved", "agents", "entities"] {
        assert_eq!(resumed[field], straight[field], "{field}");
    }
}

/// A `serve` process and the address it printed.
struct Served {
    child: Child,
    base: String,
}

impl Served {
    fn start(args: &[&str]) -> Self {
        let mut child = hecate()
            .args(["serve", "--port", "0", "--log-level", "warn"])
            .args(args)
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
        let base = line.trim().strip_prefix("listening on ").expect("address line").to_owned();
        Served { child, base }
    }

    fn get(&self, path: &str) -> Value {
        reqwest::blocking::get(format!("{}/v1{path}", self.base)).unwrap().json().unwrap()
    }

    fn post(&self, path: &str, body: Value) -> Value {
        reqwest::blocking::Client::new()
            .post(format!("{}/v1{path}", self.base))
            .json(&body)
            .send()
            .unwrap()
            .json()
            .unwrap()
    }

    /// Interrupts the process and returns what it printed afterwards.
    fn interrupt(mut self) -> String {
        let status = Command::new("kill").args(["-INT", &self.child.id().to_string()]).status().unwrap();
        assert!(status.success());
        let mut printed = String::new();
        self.child.stdout.take().unwrap().read_to_string(&mut printed).unwrap();
        let exit = self.child.wait().unwrap();
        assert!(exit.success(), "{exit:?}");
        printed
    }
}

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.child.kill();
    }
}

#[test]
fn serving_an_empty_world() {
    let served = Served::start(&[]);
    assert_eq!(served.get("/world"), json!({"tick": 0, "entityCount": 0, "agentCount": 0, "seed": 0, "groups": []}));
    assert_eq!(served.interrupt(), "");
}

#[cfg(unix)]
#[test]
fn interrupted_servers_resume_from_their_final_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().to_str().unwrap();
    let scenario = grid_scenario();
    let served = Served::start(&["--config", scenario.to_str().unwrap(), "--data-dir", data]);
    served.post("/agents", json!({"name": "late", "architecture": "reactive"}));
    served.post("/world/tick", json!({"steps": 5}));
    let views = [served.get("/world"), served.get("/agents"), served.get("/groups")];
    let printed = served.interrupt();
    let locator = printed.trim().strip_prefix("saved snapshot ").expect("snapshot line");
    assert!(dir.path().join(locator).is_file());

    let again = Served::start(&["--restore", "latest", "--data-dir", data]);
    assert_eq!([again.get("/world"), again.get("/agents"), again.get("/groups")], views);
    again.interrupt();
}
