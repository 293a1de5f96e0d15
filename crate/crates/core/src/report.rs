//! Run manifests and report serialization.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Everything needed to rerun a command. Timestamps and durations are the
/// only fields that change between identical reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub engine_version: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub seeds: Vec<u64>,
    pub threads: Option<usize>,
    pub started_unix_s: f64,
    pub wall_clock_s: f64,
}

#[derive(Debug, Serialize)]
pub struct Report<'a, T: Serialize> {
    pub manifest: &'a RunManifest,
    pub result: &'a T,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// SHA-256 of a file's bytes. Directories digest each regular file in name
/// order as `name\0digest\n` lines.
pub fn digest_path(path: &Path) -> Result<InputDigest> {
    let meta = std::fs::metadata(path).map_err(io_err(path))?;
    let mut hasher = Sha256::new();
    let mut bytes = 0u64;
    if meta.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(io_err(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for f in files {
            let d = digest_path(&f)?;
            bytes += d.bytes;
            let name = f
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            hasher.update(format!("{name}\0{}\n", d.sha256).as_bytes());
        }
    } else {
        let mut reader = BufReader::new(File::open(path).map_err(io_err(path))?);
        let mut buf = vec![0u8; 1 << 16];
        loop {
            let k = reader.read(&mut buf).map_err(io_err(path))?;
            if k == 0 {
                break;
            }
            hasher.update(&buf[..k]);
            bytes += k as u64;
        }
    }
    Ok(InputDigest {
        path: path.display().to_string(),
        bytes,
        sha256: hex::encode(hasher.finalize()),
    })
}

/// Collects a manifest while a command runs.
pub struct ManifestBuilder {
    subcommand: String,
    config: serde_json::Value,
    inputs: Vec<InputDigest>,
    seeds: Vec<u64>,
    threads: Option<usize>,
    started_unix_s: f64,
    clock: Instant,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str, threads: Option<usize>) -> Self {
        let started_unix_s = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        ManifestBuilder {
            subcommand: subcommand.into(),
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            seeds: Vec::new(),
            threads,
            started_unix_s,
            clock: Instant::now(),
        }
    }

    pub fn config<T: Serialize>(&mut self, config: &T) -> Result<()> {
        self.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest_path(path)?);
        Ok(())
    }

    pub fn seeds(&mut self, seeds: &[u64]) {
        self.seeds.extend_from_slice(seeds);
    }

    pub fn finish(&self) -> RunManifest {
        RunManifest {
            subcommand: self.subcommand.clone(),
            engine_version: ENGINE_VERSION.into(),
            config: self.config.clone(),
            inputs: self.inputs.clone(),
            seeds: self.seeds.clone(),
            threads: self.threads,
            started_unix_s: self.started_unix_s,
            wall_clock_s: self.clock.elapsed().as_secs_f64(),
        }
    }
}

pub fn report_json<T: Serialize>(manifest: &RunManifest, result: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&Report { manifest, result })?;
    s.push('\n');
    Ok(s)
}

/// Sidecar path for a CSV output: `m.csv` becomes `m.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        std::fs::write(&p, b"abc").unwrap();
        let d = digest_path(&p).unwrap();
        assert_eq!(d.bytes, 3);
        assert_eq!(
            d.sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn directory_digest_is_order_stable() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("b"), b"2").unwrap();
        std::fs::write(dir.path().join("a"), b"1").unwrap();
        let d1 = digest_path(dir.path()).unwrap();
        let d2 = digest_path(dir.path()).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(d1.bytes, 2);
    }

    #[test]
    fn report_layout() {
        let mut b = ManifestBuilder::new("f1", Some(1));
        b.config(&serde_json::json!({"k": 1})).unwrap();
        b.seeds(&[3]);
        let m = b.finish();
        let v: serde_json::Value = serde_json::from_str(&report_json(&m, &42).unwrap()).unwrap();
        assert_eq!(v["result"], 42);
        assert_eq!(v["manifest"]["subcommand"], "f1");
        assert_eq!(v["manifest"]["seeds"][0], 3);
        assert_eq!(
            manifest_path(Path::new("out/m.csv")),
            PathBuf::from("out/m.manifest.json")
        );
    }
}
