//! Crash-safe file writes shared by the persistence paths.

use crate::error::{Error, Result};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Writes `bytes` to `path` through a sibling temporary file and a rename,
/// so a reader never observes a half-written target. Parent directories are
/// created as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent)?;
    let mut tmp_name = path
        .file_name()
        .map(|n| n.to_os_string())
        .ok_or_else(|| Error::InvalidConfig(format!("not a writable file path: {:?}", path)))?;
    tmp_name.push(".tmp");
    let tmp_path = parent.join(tmp_name);
    {
        let mut f = fs::File::create(&tmp_path)?;
        f.write_all(bytes)?;
        f.flush()?;
    }
    fs::rename(&tmp_path, path)?;
    Ok(())
}
