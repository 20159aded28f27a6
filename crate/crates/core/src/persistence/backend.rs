use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use super::EncodedSnapshot;

/// Where snapshots go. A backend stores bytes verbatim: loading what was
/// saved returns the identical bytes.
pub trait StorageBackend: Send {
    /// Stores the snapshot and returns its locator.
    fn save(&mut self, snapshot: &EncodedSnapshot) -> io::Result<String>;
    fn load(&self, locator: &str) -> io::Result<Vec<u8>>;
    /// Locators, oldest tick first.
    fn list(&self) -> io::Result<Vec<String>>;

    fn latest(&self) -> io::Result<Option<String>> {
        Ok(self.list()?.pop())
    }
}

/// `snap-<tick>-<first 12 hex digits of the checksum>.json`
pub fn snapshot_name(snapshot: &EncodedSnapshot) -> String {
    format!("snap-{}-{}.json", snapshot.tick, &snapshot.checksum[..12])
}

/// Tick encoded in a snapshot name, if it is one.
pub fn tick_of(name: &str) -> Option<u64> {
    let rest = name.strip_prefix("snap-")?.strip_suffix(".json")?;
    let (tick, prefix) = rest.split_once('-')?;
    if prefix.is_empty() || !prefix.bytes().all(|b| b.is_ascii_hexdigit()) {
        return None;
    }
    tick.parse().ok()
}

fn sort_by_tick(names: &mut [String]) {
    names.sort_by(|a, b| tick_of(a).cmp(&tick_of(b)).then_with(|| a.cmp(b)));
}

/// One file per snapshot in a directory.
#[derive(Debug, Clone)]
pub struct FileBackend {
    dir: PathBuf,
}

impl FileBackend {
    pub fn new(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_of(&self, locator: &str) -> io::Result<PathBuf> {
        // Locators are bare file names; anything else could escape the directory.
        if tick_of(locator).is_none() {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("`{locator}` is not a snapshot name")));
        }
        Ok(self.dir.join(locator))
    }
}

impl StorageBackend for FileBackend {
    fn save(&mut self, snapshot: &EncodedSnapshot) -> io::Result<String> {
        let name = snapshot_name(snapshot);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, &snapshot.bytes)?;
        fs::rename(&tmp, self.dir.join(&name))?;
        Ok(name)
    }

    fn load(&self, locator: &str) -> io::Result<Vec<u8>> {
        fs::read(self.path_of(locator)?)
    }

    fn list(&self) -> io::Result<Vec<String>> {
        let mut names = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if tick_of(&name).is_some() {
                names.push(name);
            }
        }
        sort_by_tick(&mut names);
        Ok(names)
    }
}

/// Keeps snapshots in memory under the same names the file backend uses.
#[derive(Debug, Clone, Default)]
pub struct MemoryBackend {
    entries: BTreeMap<String, Vec<u8>>,
}

impl MemoryBackend {
    pub fn new() -> Self {
        Self::default()
    }
}

impl StorageBackend for MemoryBackend {
    fn save(&mut self, snapshot: &EncodedSnapshot) -> io::Result<String> {
        let name = snapshot_name(snapshot);
        self.entries.insert(name.clone(), snapshot.bytes.clone());
        Ok(name)
    }

    fn load(&self, locator: &str) -> io::Result<Vec<u8>> {
        self.entries
            .get(locator)
            .cloned()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("no snapshot `{locator}`")))
    }

    fn list(&self) -> io::Result<Vec<String>> {
        let mut names: Vec<String> = self.entries.keys().cloned().collect();
        sort_by_tick(&mut names);
        Ok(names)
    }
}
