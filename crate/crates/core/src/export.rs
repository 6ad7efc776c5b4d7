//! Artifact writing: provenance stamps, JSON documents, CSV tables and the
//! per-command manifest that records a SHA-256 digest of every file written.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    /// See [`config_hash`]; covers command-line overrides.
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of everything that affects results; the output directory is left out.
pub fn config_hash(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.output.dir = Default::default();
    sha256_hex(c.to_toml().as_bytes())
}

impl Provenance {
    pub fn new(command: &str, cfg: &RunConfig) -> Provenance {
        Provenance {
            command: command.to_string(),
            config_hash: config_hash(cfg),
            seed: cfg.sim.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Serialize)]
struct StampedRef<'a, T> {
    provenance: &'a Provenance,
    #[serde(flatten)]
    data: &'a T,
}

#[derive(Deserialize)]
struct Stamped<T> {
    provenance: Provenance,
    #[serde(flatten)]
    data: T,
}

/// Collects the files a command writes and emits `<command>.manifest.json`.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    provenance: Provenance,
    files: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub provenance: Provenance,
    /// File name to SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

impl ArtifactWriter {
    pub fn new(dir: impl AsRef<Path>, provenance: Provenance) -> Result<ArtifactWriter> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(ArtifactWriter {
            dir,
            provenance,
            files: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Records a file written by other means (e.g. a CSV writer).
    pub fn register(&mut self, name: &str) -> Result<PathBuf> {
        let path = self.path(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.files.insert(name.to_string(), sha256_hex(&bytes));
        Ok(path)
    }

    /// Pretty JSON with the provenance block first. `data` must serialize as a map.
    pub fn json<T: Serialize>(&mut self, name: &str, data: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(&StampedRef {
            provenance: &self.provenance,
            data,
        })?;
        text.push('\n');
        let path = self.path(name);
        fs::write(&path, text.as_bytes()).map_err(|e| Error::io(&path, e))?;
        self.files.insert(name.to_string(), sha256_hex(text.as_bytes()));
        Ok(path)
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<PathBuf> {
        let path = self.path(name);
        write_csv(&path, header, rows)?;
        self.register(name)
    }

    pub fn finish(self) -> Result<PathBuf> {
        let name = format!("{}.manifest.json", self.provenance.command);
        let manifest = Manifest {
            provenance: self.provenance,
            files: self.files,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a stamped JSON artifact back.
pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<(Provenance, T)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let s: Stamped<T> = serde_json::from_str(&text)?;
    Ok((s.provenance, s.data))
}

/// Shortest decimal that round-trips to the same `f64`; `-0` prints as `0`.
pub fn num(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        v.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Doc {
        x: f64,
        name: String,
    }

    #[test]
    fn stamped_json_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let mut w = ArtifactWriter::new(dir.path(), Provenance::new("solve", &cfg)).unwrap();
        let doc = Doc {
            x: 0.1 + 0.2,
            name: "a".into(),
        };
        let path = w.json("doc.json", &doc).unwrap();
        w.csv("t.csv", &["a", "b"], vec![vec![num(1.0 / 3.0), num(2.5)]]).unwrap();
        let manifest = w.finish().unwrap();
        let (prov, back): (Provenance, Doc) = read_json(&path).unwrap();
        assert_eq!(back, doc);
        assert_eq!(prov.config_hash, config_hash(&cfg));
        let m: Manifest = serde_json::from_str(&fs::read_to_string(manifest).unwrap()).unwrap();
        assert_eq!(m.files.len(), 2);
        let csv_text = fs::read_to_string(dir.path().join("t.csv")).unwrap();
        assert_eq!(csv_text, "a,b\n0.3333333333333333,2.5\n");
        assert_eq!(m.files["t.csv"], sha256_hex(csv_text.as_bytes()));
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.sim.seed = 1;
        assert_ne!(config_hash(&a), config_hash(&b));
    }
}
