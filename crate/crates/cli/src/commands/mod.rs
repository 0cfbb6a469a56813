pub mod detect;
pub mod evaluate;
pub mod reconstruct;
pub mod report;
pub mod simulate;

use std::path::{Path, PathBuf};

use kinereco::{Error, Result};

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn kinematics_path(dir: &Path, event: &str) -> PathBuf {
    dir.join(format!("kinematics_{event}.csv"))
}

pub fn cutoff_path(dir: &Path, event: &str) -> PathBuf {
    dir.join(format!("cutoff_{event}.json"))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
