//! Output files with provenance header lines.

use std::path::{Path, PathBuf};

use serde_json::Value;
use tailweight::mixture::render_sig17;

use crate::error::{CliError, CliResult};

/// Seed and configuration hash stamped on every output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub config_hash: String,
}

impl Provenance {
    /// `# seed=..., config_hash=...` (seed omitted for deterministic modes).
    pub fn header(&self) -> String {
        match self.seed {
            Some(s) => format!("# seed={s}, config_hash={}\n", self.config_hash),
            None => format!("# config_hash={}\n", self.config_hash),
        }
    }

    /// Adds `seed` and `config_hash` fields to a JSON object.
    pub fn stamp(&self, mut v: Value) -> Value {
        if let Value::Object(map) = &mut v {
            map.insert("seed".into(), self.seed.map_or(Value::Null, Value::from));
            map.insert("config_hash".into(), Value::from(self.config_hash.clone()));
        }
        v
    }
}

pub struct OutputDir {
    root: PathBuf,
    provenance: Provenance,
}

impl OutputDir {
    pub fn create(root: &Path, provenance: Provenance) -> CliResult<Self> {
        std::fs::create_dir_all(root)
            .map_err(|e| CliError::Input(format!("cannot create output directory {}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf(), provenance })
    }

    fn write(&self, name: &str, text: &str) -> CliResult<()> {
        let path = self.root.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
        log::info!("wrote {}", path.display());
        Ok(())
    }

    /// CSV body preceded by the provenance header.
    pub fn csv(&self, name: &str, body: &str) -> CliResult<()> {
        self.write(name, &format!("{}{body}", self.provenance.header()))
    }

    /// JSON object stamped with the provenance fields.
    pub fn json(&self, name: &str, value: Value) -> CliResult<()> {
        self.write(name, &format!("{}\n", render_sig17(&self.provenance.stamp(value))))
    }
}
