//! Result files: a provenance header on every CSV, a `meta` block on every
//! JSON document, and atomic replacement of each file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::Config;
use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct Output {
    dir: PathBuf,
    seeds: Vec<u64>,
    hash: String,
}

impl Output {
    pub fn create(config: &Config) -> Result<Self, CliError> {
        let dir = PathBuf::from(&config.output_dir);
        fs::create_dir_all(&dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir,
            seeds: config.seeds(),
            hash: config.hash(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn header(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        format!("# agesim {VERSION} seeds={} config={}\n", seeds.join(","), self.hash)
    }

    fn meta(&self) -> Value {
        json!({
            "tool": format!("agesim {VERSION}"),
            "seeds": self.seeds,
            "config_sha256": self.hash,
        })
    }

    pub fn csv(&self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        self.write(name, &(self.header() + body))
    }

    /// Writes `value` (a JSON object) with `meta` as its first key.
    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let body = serde_json::to_value(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        let mut doc = Map::new();
        doc.insert("meta".into(), self.meta());
        match body {
            Value::Object(fields) => doc.extend(fields),
            other => {
                doc.insert("value".into(), other);
            }
        }
        let mut text = serde_json::to_string_pretty(&Value::Object(doc)).expect("json serializes");
        text.push('\n');
        self.write(name, &text)
    }

    pub fn write(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        write_atomic(&path, text)?;
        Ok(path)
    }
}

/// Writes next to the target and renames over it.
pub fn write_atomic(path: &Path, text: &str) -> Result<(), CliError> {
    let err = |e: std::io::Error| CliError::Runtime(format!("cannot write {}: {e}", path.display()));
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(err)?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, text).map_err(err)?;
    fs::rename(&tmp, path).map_err(err)
}
