//! Artifact manifest: every file a run produces, with a content hash, plus
//! the status of each stage. The manifest is the run's integrity record —
//! `report` re-verifies hashes before aggregating.

use std::fmt::Write as _;
use std::io::Read as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_NAME: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str = "kind,name,status,sha256,bytes";

/// Accumulates artifact rows for one run directory and writes them as
/// `manifest.csv` when finished.
pub struct Manifest {
    root: PathBuf,
    rows: Vec<Row>,
}

struct Row {
    kind: &'static str,
    name: String,
    status: String,
    sha256: String,
    bytes: u64,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64), CliError> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| CliError::Stage(format!("cannot hash {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    let mut total = 0u64;
    loop {
        let n = file
            .read(&mut buf)
            .map_err(|e| CliError::Stage(format!("read {}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    let mut hex = String::with_capacity(64);
    for b in hasher.finalize() {
        let _ = write!(hex, "{b:02x}");
    }
    Ok((hex, total))
}

impl Manifest {
    pub fn new(root: &Path) -> Self {
        Manifest {
            root: root.to_path_buf(),
            rows: Vec::new(),
        }
    }

    /// Records a produced file (path must live under the run root).
    pub fn add_file(&mut self, path: &Path) -> Result<(), CliError> {
        let rel = path
            .strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/");
        let (sha256, bytes) = sha256_file(path)?;
        self.rows.push(Row {
            kind: "file",
            name: rel,
            status: "ok".into(),
            sha256,
            bytes,
        });
        Ok(())
    }

    /// Records the outcome of a named stage ("ok" or "failed: reason").
    pub fn add_stage(&mut self, name: &str, status: &str) {
        self.rows.push(Row {
            kind: "stage",
            name: name.into(),
            status: status.replace(',', ";").replace('\n', " "),
            sha256: String::new(),
            bytes: 0,
        });
    }

    pub fn any_stage_failed(&self) -> bool {
        self.rows
            .iter()
            .any(|r| r.kind == "stage" && r.status != "ok")
    }

    /// Writes `manifest.csv` into the run root and returns its path.
    pub fn write(&self) -> Result<PathBuf, CliError> {
        let path = self.root.join(MANIFEST_NAME);
        let mut text = String::from(MANIFEST_HEADER);
        text.push('\n');
        for row in &self.rows {
            let _ = writeln!(
                text,
                "{},{},{},{},{}",
                row.kind, row.name, row.status, row.sha256, row.bytes
            );
        }
        std::fs::write(&path, text)
            .map_err(|e| CliError::Stage(format!("write {}: {e}", path.display())))?;
        Ok(path)
    }
}

/// Re-hashes every file row of a run's manifest and fails on any mismatch
/// or missing file. Returns the number of verified files.
pub fn verify_manifest(dir: &Path) -> Result<usize, CliError> {
    let path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Stage(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == MANIFEST_HEADER => {}
        other => {
            return Err(CliError::Stage(format!(
                "bad manifest header in {}: {other:?}",
                path.display()
            )))
        }
    }
    let mut verified = 0;
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(CliError::Stage(format!(
                "manifest line {} malformed: {line:?}",
                lineno + 2
            )));
        }
        if fields[0] != "file" {
            continue;
        }
        let file = dir.join(fields[1]);
        let (sha256, bytes) = sha256_file(&file)?;
        if sha256 != fields[3] || bytes.to_string() != fields[4] {
            return Err(CliError::Stage(format!(
                "manifest hash mismatch for {}",
                file.display()
            )));
        }
        verified += 1;
    }
    Ok(verified)
}
