use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, Result};

/// Shortest decimal that round-trips, so identical values give identical bytes.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Writes through a temporary sibling and renames, so readers never see half a file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<PathBuf> {
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    f.sync_all().map_err(|e| HarnessError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))?;
    Ok(path.to_path_buf())
}
