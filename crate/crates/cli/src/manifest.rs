//! Run manifests: what was run, on which inputs, with which settings.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use imls_sdf::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub arguments: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputFile>,
    pub seed: u64,
    pub threads: usize,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: RunStatus,
    pub outputs: Vec<PathBuf>,
    pub error: Option<String>,
}

pub fn sha256_file(path: &Path) -> Result<String, Error> {
    let io = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut reader = BufReader::new(File::open(path).map_err(io)?);
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = reader.read(&mut buf).map_err(io)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str, config: &impl Serialize, inputs: &[&Path], seed: u64) -> anyhow::Result<Self> {
        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            arguments: std::env::args().skip(1).collect(),
            config: serde_json::to_value(config)?,
            inputs: inputs
                .iter()
                .map(|p| Ok(InputFile { path: p.to_path_buf(), sha256: sha256_file(p)? }))
                .collect::<Result<_, Error>>()?,
            seed,
            threads: rayon::current_num_threads(),
            started_at: now(),
            finished_at: None,
            status: RunStatus::Running,
            outputs: Vec::new(),
            error: None,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<(), Error> {
        let path = dir.join(MANIFEST_FILE);
        let body = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, body).map_err(|e| Error::Io { path, source: e })
    }

    pub fn finish(&mut self, dir: &Path, outcome: &anyhow::Result<()>) -> Result<(), Error> {
        self.finished_at = Some(now());
        match outcome {
            Ok(()) => self.status = RunStatus::Completed,
            Err(e) => {
                self.status = RunStatus::Failed;
                self.error = Some(format!("{e:#}"));
            }
        }
        self.write(dir)
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_of_known_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(sha256_file(&p).unwrap(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert!(matches!(sha256_file(&dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn round_trip_and_status() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("in.xyz");
        std::fs::write(&p, b"0 0 0\n").unwrap();
        let mut m = RunManifest::start("reconstruct", &serde_json::json!({"epochs": 3}), &[&p], 9).unwrap();
        m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::read(&dir.path().join(MANIFEST_FILE)).unwrap().status, RunStatus::Running);
        m.finish(dir.path(), &Ok(())).unwrap();
        let back = RunManifest::read(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.status, RunStatus::Completed);
        assert_eq!(back.config["epochs"], 3);
    }
}
