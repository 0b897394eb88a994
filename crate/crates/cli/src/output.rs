use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bread::record::{git_blob_hash, to_json_bytes, toolkit_version, write_atomic};
use serde::Serialize;

/// Files written by one command, with their content hashes.
pub struct Outputs {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Meta<'a, S: Serialize> {
    command: &'a str,
    toolkit_version: String,
    seed: u64,
    seed_source: &'a str,
    settings: &'a S,
    outputs: &'a BTreeMap<String, String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.files.insert(name.to_string(), git_blob_hash(bytes));
        log::info!("wrote {}", self.dir.join(name).display());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        self.write(name, &to_json_bytes(value)?)
    }

    /// Writes `<command>_meta.json` describing the run and its outputs.
    pub fn finish<S: Serialize>(
        self,
        command: &str,
        seed: u64,
        seed_source: &str,
        settings: &S,
    ) -> anyhow::Result<()> {
        let meta = Meta {
            command,
            toolkit_version: toolkit_version(),
            seed,
            seed_source,
            settings,
            outputs: &self.files,
        };
        let name = format!("{}_meta.json", command.replace('-', "_"));
        write_atomic(&self.dir.join(name), &to_json_bytes(&meta)?)?;
        Ok(())
    }
}
