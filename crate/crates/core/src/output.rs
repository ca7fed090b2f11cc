//! Result files: provenance stamps, atomic writes and the timestamped
//! sidecar log.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Identifies the configuration and seed a file was produced from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_text: &str, seed: u64) -> Self {
        Self {
            config_hash: config_hash(config_text),
            seed,
        }
    }

    /// Comment line placed at the top of CSV outputs.
    pub fn csv_comment(&self) -> String {
        format!("# config_hash={} seed={}", self.config_hash, self.seed)
    }
}

/// Hex SHA-256 of the configuration text.
pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// JSON object with the provenance fields followed by `body`'s fields.
#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: &'a T,
}

pub fn stamped_json<T: Serialize>(provenance: &Provenance, body: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(&Stamped {
        config_hash: &provenance.config_hash,
        seed: provenance.seed,
        body,
    })?;
    out.push(b'\n');
    Ok(out)
}

/// Writes to a temporary sibling and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Named in-memory outputs written together.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn files(&self) -> &[(String, Vec<u8>)] {
        &self.files
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    pub fn write_all(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        self.files
            .iter()
            .map(|(name, bytes)| {
                let path = dir.join(name);
                atomic_write(&path, bytes)?;
                Ok(path)
            })
            .collect()
    }
}

/// Prefixes CSV bytes with the provenance comment.
pub fn stamped_csv(provenance: &Provenance, csv: Vec<u8>) -> Vec<u8> {
    let mut out = provenance.csv_comment().into_bytes();
    out.push(b'\n');
    out.extend(csv);
    out
}

/// Sidecar log; the only place wall-clock time is recorded.
pub fn write_log(dir: &Path, command: &str, provenance: &Provenance, written: &[PathBuf], status: &str) -> Result<()> {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let mut text = format!(
        "unix_time={now:.3}\ncommand={command}\nconfig_hash={}\nseed={}\nstatus={status}\n",
        provenance.config_hash, provenance.seed
    );
    for p in written {
        text.push_str(&format!("wrote={}\n", p.display()));
    }
    atomic_write(&dir.join(format!("{command}.log")), text.as_bytes())
}
