//! Record of one run: inputs, configuration, outputs and timings.

use std::fs::File;
use std::io::{self, Read};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path, label: String) -> io::Result<Self> {
        let mut f = File::open(path)?;
        let mut hasher = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        let mut bytes = 0u64;
        loop {
            let n = f.read(&mut buf)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
            bytes += n as u64;
        }
        Ok(FileDigest { path: label, bytes, sha256: hex::encode(hasher.finalize()) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleVersion {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config_path: Option<String>,
    pub versions: Vec<ModuleVersion>,
    pub inputs: Vec<FileDigest>,
    /// Output paths are relative to the output directory.
    pub outputs: Vec<FileDigest>,
    /// Output file and the operation whose results it holds.
    pub provenance: Vec<(String, String)>,
    pub timings: Vec<StageTiming>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config_sha256: String, config_path: Option<String>) -> Self {
        RunManifest {
            command: command.to_owned(),
            seed,
            config_sha256,
            config_path,
            versions: vec![
                ModuleVersion { name: "crowdcdr".into(), version: env!("CARGO_PKG_VERSION").into() },
                ModuleVersion { name: "crowdcdr-core".into(), version: crowdcdr_core::VERSION.into() },
            ],
            inputs: Vec::new(),
            outputs: Vec::new(),
            provenance: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> io::Result<()> {
        self.inputs.push(FileDigest::of(path, path.display().to_string())?);
        Ok(())
    }

    /// Records an output file under `dir` and the operation that produced it.
    pub fn output(&mut self, dir: &Path, name: &str, source: &str) -> io::Result<()> {
        self.outputs.push(FileDigest::of(&dir.join(name), name.to_owned())?);
        self.provenance.push((name.to_owned(), source.to_owned()));
        Ok(())
    }

    /// Runs `f` and records its wall-clock time.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.timings.push(StageTiming { stage: stage.to_owned(), seconds: t.elapsed().as_secs_f64() });
        out
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")
    }

    pub fn read(dir: &Path) -> io::Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        serde_json::from_str(&text).map_err(io::Error::other)
    }
}
