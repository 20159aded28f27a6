//! Leveled, tick-stamped logger.
//!
//! Every record is one line of space separated `key=value` pairs, starting
//! with `tick=<n> level=<l> event=<kind>`. Values containing whitespace,
//! quotes or `=` are quoted.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Error => "error",
            Level::Warn => "warn",
            Level::Info => "info",
            Level::Debug => "debug",
            Level::Trace => "trace",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "error" => Ok(Level::Error),
            "warn" | "warning" => Ok(Level::Warn),
            "info" => Ok(Level::Info),
            "debug" => Ok(Level::Debug),
            "trace" => Ok(Level::Trace),
            other => Err(format!("unknown log level `{other}`")),
        }
    }
}

enum Sink {
    Console,
    File(BufWriter<File>),
    Memory(Arc<Mutex<Vec<String>>>),
}

pub struct Logger {
    level: Level,
    sinks: Vec<Sink>,
}

impl Default for Logger {
    fn default() -> Self {
        Self::new(Level::Info)
    }
}

impl fmt::Debug for Logger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Logger").field("level", &self.level).field("sinks", &self.sinks.len()).finish()
    }
}

impl Logger {
    pub fn new(level: Level) -> Self {
        Self { level, sinks: Vec::new() }
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn set_level(&mut self, level: Level) {
        self.level = level;
    }

    pub fn add_console(&mut self) {
        self.sinks.push(Sink::Console);
    }

    pub fn add_file(&mut self, path: impl AsRef<Path>) -> io::Result<()> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.sinks.push(Sink::File(BufWriter::new(file)));
        Ok(())
    }

    /// Captures records in memory; returns the shared buffer.
    pub fn add_memory(&mut self) -> Arc<Mutex<Vec<String>>> {
        let buf = Arc::new(Mutex::new(Vec::new()));
        self.sinks.push(Sink::Memory(buf.clone()));
        buf
    }

    pub fn enabled(&self, level: Level) -> bool {
        !self.sinks.is_empty() && level <= self.level
    }

    pub fn log(&mut self, tick: u64, level: Level, event: &str, fields: &[(&str, &dyn fmt::Display)]) {
        if !self.enabled(level) {
            return;
        }
        let line = format_record(tick, level, event, fields);
        for sink in &mut self.sinks {
            match sink {
                Sink::Console => eprintln!("{line}"),
                Sink::File(w) => {
                    // Logging never fails the caller.
                    let _ = writeln!(w, "{line}");
                }
                Sink::Memory(buf) => buf.lock().expect("log buffer poisoned").push(line.clone()),
            }
        }
    }

    pub fn flush(&mut self) {
        for sink in &mut self.sinks {
            if let Sink::File(w) = sink {
                let _ = w.flush();
            }
        }
    }
}

impl Drop for Logger {
    fn drop(&mut self) {
        self.flush();
    }
}

pub fn format_record(tick: u64, level: Level, event: &str, fields: &[(&str, &dyn fmt::Display)]) -> String {
    let mut line = format!("tick={tick} level={level} event={}", quote(event));
    for (key, value) in fields {
        line.push(' ');
        line.push_str(key);
        line.push('=');
        line.push_str(&quote(&value.to_string()));
    }
    line
}

fn quote(value: &str) -> String {
    if !value.is_empty() && !value.chars().any(|c| c.is_whitespace() || c == '"' || c == '=') {
        return value.to_owned();
    }
    let mut out = String::with_capacity(value.len() + 2);
    out.push('"');
    for c in value.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_format() {
        let line = format_record(3, Level::Info, "entity-created", &[("entity", &"0v0"), ("note", &"two words")]);
        assert_eq!(line, r#"tick=3 level=info event=entity-created entity=0v0 note="two words""#);
    }

    #[test]
    fn level_filter() {
        let mut logger = Logger::new(Level::Warn);
        let buf = logger.add_memory();
        logger.log(0, Level::Info, "skipped", &[]);
        logger.log(1, Level::Error, "kept", &[]);
        assert_eq!(buf.lock().unwrap().as_slice(), ["tick=1 level=error event=kept"]);
    }

    #[test]
    fn file_sink_writes_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.log");
        {
            let mut logger = Logger::new(Level::Trace);
            logger.add_file(&path).unwrap();
            logger.log(7, Level::Debug, "system-run", &[("system", &"movement")]);
        }
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text, "tick=7 level=debug event=system-run system=movement\n");
    }

    #[test]
    fn parse_levels() {
        assert_eq!("WARN".parse::<Level>().unwrap(), Level::Warn);
        assert!("loud".parse::<Level>().is_err());
    }
}
