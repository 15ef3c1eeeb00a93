use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sparseseg::Error;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one command invocation. Output paths are relative to the output
/// directory, which is not recorded, so a manifest replays into any
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub params: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }
}

/// Files produced by a command, written together with the manifest.
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new() -> Self {
        Self { files: Vec::new() }
    }

    pub fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_owned(), bytes.into()));
    }

    pub fn write(
        self,
        out: &Path,
        command: &str,
        params: Value,
        seed: Option<u64>,
        inputs: Vec<PathBuf>,
    ) -> Result<(), Error> {
        let io = |p: &Path, e| Error::Io {
            path: p.to_owned(),
            source: e,
        };
        fs::create_dir_all(out).map_err(|e| io(out, e))?;
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            command: command.to_owned(),
            params,
            seed,
            inputs,
            outputs: self.files.iter().map(|(n, _)| n.clone()).collect(),
        };
        for (name, bytes) in &self.files {
            let p = out.join(name);
            fs::write(&p, bytes).map_err(|e| io(&p, e))?;
        }
        let p = out.join(MANIFEST_FILE);
        let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        json.push('\n');
        fs::write(&p, json).map_err(|e| io(&p, e))
    }
}
