//! Failure plumbing and atomic file output.

use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// A failure with its process exit code: 1 for bad inputs or environment,
/// 2 for numerical breakdowns.
#[derive(Debug)]
pub struct Failure {
    pub message: String,
    pub code: u8,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Failure {
        Failure {
            message: message.into(),
            code: 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<itr_core::Error> for Failure {
    fn from(e: itr_core::Error) -> Failure {
        Failure {
            code: if e.is_numerical() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Failure {
        Failure::validation(format!("io error: {e}"))
    }
}

pub type Outcome<T> = Result<T, Failure>;

fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Write bytes to a sibling temp file, then rename into place so readers
/// never observe a partial report.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Outcome<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = temp_sibling(path);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::validation(format!("could not serialize report: {e}")))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn write_dataset_csv(data: &itr_core::tabular::Dataset, path: &Path) -> Outcome<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = temp_sibling(path);
    itr_core::tabular::write_csv(data, &tmp)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Hex SHA-256 of a file's bytes, streamed.
pub fn sha256_hex(path: &Path) -> Outcome<String> {
    let mut file = fs::File::open(path)
        .map_err(|e| Failure::validation(format!("cannot open {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
