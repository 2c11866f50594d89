//! Machine-readable run records: what was run, with which settings, on
//! which inputs (by content hash), producing which outputs.

use std::path::Path;

use anyhow::{Context, Result};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn file_entry(path: &Path) -> Result<Value> {
    Ok(json!({ "path": path.display().to_string(), "sha256": sha256_file(path)? }))
}

pub struct RunRecord {
    fields: Map<String, Value>,
    inputs: Vec<Value>,
    outputs: Vec<Value>,
}

impl RunRecord {
    pub fn new(command: &str, seed: u64) -> Self {
        let mut fields = Map::new();
        fields.insert("tool".into(), json!(format!("coilscope {}", env!("CARGO_PKG_VERSION"))));
        fields.insert("command".into(), json!(command));
        fields.insert("seed".into(), json!(seed));
        Self {
            fields,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: Value) -> &mut Self {
        self.fields.insert(key.into(), value);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.inputs.push(file_entry(path)?);
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> Result<&mut Self> {
        self.outputs.push(file_entry(path)?);
        Ok(self)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut all = self.fields.clone();
        all.insert("inputs".into(), Value::Array(self.inputs.clone()));
        all.insert("outputs".into(), Value::Array(self.outputs.clone()));
        let text = serde_json::to_string_pretty(&Value::Object(all))? + "\n";
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}
