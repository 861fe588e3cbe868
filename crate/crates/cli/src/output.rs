//! Artifact files. Every file starts with the same metadata: tool version,
//! config hash and seed. CSV and text files carry it as `#` comment lines,
//! JSON map documents in their `metadata` object.

use std::fs;
use std::path::{Path, PathBuf};

use ttm_core::mapfile::MapDocument;

use crate::config::RunConfig;
use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct Artifacts {
    dir: PathBuf,
    metadata: Vec<(&'static str, String)>,
    written: Vec<PathBuf>,
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_owned(), source }
}

impl Artifacts {
    /// Creates `dir` and records the resolved config next to the outputs.
    pub fn create(dir: &Path, config: &RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
        let metadata = vec![
            ("tool", format!("ttm {VERSION}")),
            ("config_sha256", config.hash()),
            ("seed", config.seed.map_or_else(|| "none".to_string(), |s| s.to_string())),
        ];
        let mut out = Self { dir: dir.to_owned(), metadata, written: Vec::new() };
        let mut body = serde_json::to_string_pretty(config).expect("config serializes");
        body.push('\n');
        out.put("config.json", body.as_bytes())?;
        Ok(out)
    }

    fn header(&self) -> String {
        self.metadata.iter().map(|(k, v)| format!("# {k}: {v}\n")).collect()
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(io_error(&path))?;
        self.written.push(path);
        Ok(())
    }

    /// Writes a commented header followed by whatever `body` produces.
    pub fn text<F>(&mut self, name: &str, body: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> ttm_core::Result<()>,
    {
        let mut buf = self.header().into_bytes();
        body(&mut buf).map_err(|source| CliError::Pipeline { stage: "output", source })?;
        self.put(name, &buf)
    }

    pub fn document(&mut self, name: &str, mut doc: MapDocument) -> Result<(), CliError> {
        for (k, v) in &self.metadata {
            doc.metadata.insert((*k).to_string(), v.clone());
        }
        let mut buf = Vec::new();
        doc.write(&mut buf).map_err(|source| CliError::Pipeline { stage: "mapfile", source })?;
        buf.push(b'\n');
        self.put(name, &buf)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}
