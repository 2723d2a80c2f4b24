//! Atomic output files and JSON-line logging.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use log::{LevelFilter, Log, Metadata, Record};

/// Files written by the current command. Each is produced under a temporary
/// sibling name and renamed into place; [`Outputs::discard`] deletes the
/// ones already committed when a later step fails.
#[derive(Debug, Default)]
pub struct Outputs {
    committed: Vec<PathBuf>,
}

fn staging_path(path: &Path) -> PathBuf {
    let mut name = OsString::from(".");
    name.push(path.file_name().unwrap_or_default());
    name.push(".partial");
    path.with_file_name(name)
}

impl Outputs {
    pub fn write(&mut self, path: &Path, produce: impl FnOnce(&Path) -> driftscan::Result<()>) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let tmp = staging_path(path);
        if let Err(e) = produce(&tmp) {
            let _ = fs::remove_file(&tmp);
            return Err(e).with_context(|| format!("writing {}", path.display()));
        }
        fs::rename(&tmp, path).with_context(|| format!("moving output into {}", path.display()))?;
        self.committed.push(path.to_path_buf());
        Ok(())
    }

    pub fn write_text(&mut self, path: &Path, text: &str) -> Result<()> {
        self.write(path, |tmp| {
            fs::write(tmp, text).map_err(|e| driftscan::Error::Io { path: tmp.to_path_buf(), source: e })
        })
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.committed
    }

    pub fn discard(self) {
        for p in self.committed {
            if fs::remove_file(&p).is_ok() {
                log::warn!("removed partial output {}", p.display());
            }
        }
    }
}

/// One JSON object per line on standard error.
pub struct JsonLogger {
    start: Instant,
    level: LevelFilter,
}

impl JsonLogger {
    pub fn install(level: LevelFilter) {
        let logger = JsonLogger { start: Instant::now(), level };
        if log::set_boxed_logger(Box::new(logger)).is_ok() {
            log::set_max_level(level);
        }
    }
}

impl Log for JsonLogger {
    fn enabled(&self, m: &Metadata) -> bool {
        m.level() <= self.level
    }

    fn log(&self, record: &Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let line = serde_json::json!({
            "elapsed_ms": self.start.elapsed().as_millis() as u64,
            "level": record.level().as_str().to_ascii_lowercase(),
            "target": record.target(),
            "message": record.args().to_string(),
        });
        let mut err = std::io::stderr().lock();
        let _ = writeln!(err, "{line}");
    }

    fn flush(&self) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_write_leaves_nothing_behind() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        let mut out = Outputs::default();
        let err = out.write(&path, |tmp| {
            fs::write(tmp, "half").unwrap();
            Err(driftscan::Error::InvalidParameter("boom".into()))
        });
        assert!(err.is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn discard_removes_committed_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Outputs::default();
        let a = dir.path().join("sub/a.txt");
        out.write_text(&a, "x").unwrap();
        assert_eq!(fs::read_to_string(&a).unwrap(), "x");
        out.discard();
        assert!(!a.exists());
    }
}
