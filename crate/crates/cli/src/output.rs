//! Output files plus their `.meta.json` sidecars.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Serialize)]
struct Meta<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    file: &'a str,
    seed: u64,
    config_sha256: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    data_sha256: Option<&'a str>,
}

pub struct Outputs {
    dir: PathBuf,
    force: bool,
    command: String,
    seed: u64,
    config_hash: String,
    data_hash: Option<String>,
}

fn hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Outputs {
    pub fn new(dir: &Path, force: bool, command: &str, cfg: &RunConfig) -> Result<Self, CliError> {
        let data_hash = cfg.data.as_ref().and_then(|p| std::fs::read(p).ok()).map(|b| hex(&b));
        Ok(Self {
            dir: dir.to_path_buf(),
            force,
            command: command.to_string(),
            seed: cfg.seed(),
            config_hash: cfg.hash(),
            data_hash,
        })
    }

    /// Refuses to go on if any output (or sidecar) exists, unless forced.
    /// Creates the output directory.
    pub fn claim<S: AsRef<str>>(&mut self, names: &[S]) -> Result<(), CliError> {
        if !self.force {
            for name in names {
                for p in [self.dir.join(name.as_ref()), self.meta_path(name.as_ref())] {
                    if p.exists() {
                        return Err(CliError::Config(format!("{} exists; pass --force to overwrite", p.display())));
                    }
                }
            }
        }
        std::fs::create_dir_all(&self.dir)
            .map_err(|e| CliError::Core(mpple::Error::Io(e)))
    }

    fn meta_path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.meta.json"))
    }

    fn sidecar(&self, name: &str) -> Result<(), CliError> {
        let meta = Meta {
            tool: "mpple",
            version: env!("CARGO_PKG_VERSION"),
            command: &self.command,
            file: name,
            seed: self.seed,
            config_sha256: &self.config_hash,
            data_sha256: self.data_hash.as_deref(),
        };
        write_json(&self.meta_path(name), &meta)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        write_json(&self.dir.join(name), value)?;
        self.sidecar(name)
    }

    pub fn csv(&self, name: &str, write: impl FnOnce(&Path) -> mpple::Result<()>) -> Result<(), CliError> {
        write(&self.dir.join(name))?;
        self.sidecar(name)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Core(mpple::Error::Io(e)))
}
