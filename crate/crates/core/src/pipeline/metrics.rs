use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Version of the JSON-lines metrics layout.
pub const SCHEMA_VERSION: u32 = 1;

/// First 16 hex digits of the SHA-256 of `value`'s JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&bytes)[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub schema: u32,
    pub stage: String,
    pub seed: u64,
    pub config_hash: String,
    pub elapsed_s: f64,
    /// `None` on success; the failure message, or why the stage was skipped.
    pub error: Option<String>,
    pub warnings: Vec<String>,
    /// Stage-specific values.
    #[serde(flatten)]
    pub fields: Map<String, Value>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub config_hash: String,
    pub stages: Vec<StageRecord>,
}

impl RunMetrics {
    pub fn new(seed: u64, config_hash: String) -> Self {
        RunMetrics {
            seed,
            config_hash,
            stages: Vec::new(),
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &str> {
        self.stages.iter().flat_map(|s| s.warnings.iter().map(String::as_str))
    }

    pub fn push(&mut self, stage: &str, elapsed_s: f64, error: Option<String>, warnings: Vec<String>, fields: Map<String, Value>) {
        self.stages.push(StageRecord {
            schema: SCHEMA_VERSION,
            stage: stage.to_string(),
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            elapsed_s: elapsed_s.max(0.0),
            error,
            warnings,
            fields,
        });
    }

    /// Appends one JSON object per stage to `w`.
    pub fn write_jsonl(&self, w: &mut impl Write) -> Result<()> {
        for s in &self.stages {
            serde_json::to_writer(&mut *w, s).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_short() {
        let a = config_hash(&(1, "x"));
        assert_eq!(a.len(), 16);
        assert_eq!(a, config_hash(&(1, "x")));
        assert_ne!(a, config_hash(&(2, "x")));
    }

    #[test]
    fn one_line_per_stage() {
        let mut m = RunMetrics::new(3, "abc".into());
        let mut f = Map::new();
        f.insert("replicas".into(), Value::from(4));
        m.push("compression", 0.5, None, vec![], f);
        m.push("decomposition", -1.0, Some("boom".into()), vec!["w".into()], Map::new());
        let text = m.to_jsonl();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let first: StageRecord = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first.fields["replicas"], 4);
        assert_eq!(first.schema, SCHEMA_VERSION);
        let second: Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(second["error"], "boom");
        assert_eq!(second["elapsed_s"], 0.0);
    }
}
