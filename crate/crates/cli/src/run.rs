//! Output bookkeeping: every file a command writes goes through [`Run`], which
//! records its digest in the run manifest written last.

use crate::config::CliConfig;
use crate::error::{CliError, CliResult};
use ihc_core::pipeline::sha256_file;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub core_version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub config_hash: String,
    pub config: CliConfig,
    pub seed: u64,
    pub workers: usize,
    /// Input path to SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output path, relative to the output directory, to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub status: String,
    pub started_unix_s: u64,
    pub wall_time_s: f64,
}

pub struct Run {
    dir: PathBuf,
    command: String,
    config: CliConfig,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    started: SystemTime,
    clock: Instant,
}

impl Run {
    pub fn start(dir: &Path, command: &str, config: &CliConfig) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            config: config.clone(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started: SystemTime::now(),
            clock: Instant::now(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let digest = sha256_file(path).map_err(|e| CliError::io(path, e))?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.record(name)?;
        Ok(path)
    }

    /// Registers a file some other writer already produced under the run dir.
    pub fn record(&mut self, name: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        let digest = sha256_file(&path).map_err(|e| CliError::io(&path, e))?;
        self.outputs.insert(name.replace('\\', "/"), digest);
        Ok(())
    }

    pub fn finish(self, status: &str) -> CliResult<PathBuf> {
        let manifest = RunManifest {
            tool: "ihcq",
            version: env!("CARGO_PKG_VERSION"),
            core_version: ihc_core::VERSION,
            command: self.command,
            args: std::env::args().collect(),
            config_hash: self.config.hash(),
            seed: self.config.seed,
            workers: self.config.workers,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            status: status.to_string(),
            started_unix_s: self.started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_time_s: self.clock.elapsed().as_secs_f64(),
        };
        let path = self.dir.join(RUN_MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n";
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
