//! Config records: defaults, overlaid by the `--config` file, then by `--set`
//! and dedicated flags. Unknown keys fail deserialisation.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use hmmrnn::train::HmmSource;

use crate::error::CliError;
use crate::Common;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub hmm: HmmSource,
    pub len: usize,
    pub n: usize,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { hmm: chain(2), len: 100, n: 10, seed: 0 }
    }
}

pub fn chain(m: usize) -> HmmSource {
    HmmSource::LinearChain { m, rho: 0.05, eps: 0.01 }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingFile(path.to_path_buf()),
        _ => CliError::Other(format!("{}: {e}", path.display())),
    })
}

/// Objects merge key by key; a tagged object whose `kind` changes is replaced whole.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            let retag = matches!((b.get("kind"), o.get("kind")), (Some(x), Some(y)) if x != y);
            if retag {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| CliError::Config(format!("{key}: not an object path")))?;
        if i + 1 == parts.len() {
            match obj.get_mut(*part) {
                Some(slot) => merge(slot, value),
                None => {
                    obj.insert(part.to_string(), value);
                }
            }
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

/// `KEY=VALUE`; VALUE is parsed as JSON and falls back to a plain string.
fn parse_set(s: &str) -> Result<(String, Value), CliError> {
    let (k, v) = s.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Defaults ← config file ← `--set` ← dedicated flags (`extra`) ← `--seed`.
pub fn load<T: Serialize + DeserializeOwned>(default: T, common: &Common, extra: Vec<(&str, Value)>) -> Result<T, CliError> {
    let mut v = serde_json::to_value(default)?;
    if let Some(path) = &common.config {
        let text = read_text(path)?;
        let file: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if !file.is_object() {
            return Err(CliError::Config(format!("{}: top level must be an object", path.display())));
        }
        merge(&mut v, file);
    }
    for s in &common.set {
        let (k, val) = parse_set(s)?;
        set_path(&mut v, &k, val)?;
    }
    for (k, val) in extra {
        set_path(&mut v, k, val)?;
    }
    if let Some(seed) = common.seed {
        set_path(&mut v, "seed", Value::from(seed))?;
    }
    serde_json::from_value(v).map_err(|e| CliError::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_keeps_unmentioned_keys() {
        let mut a = json!({"x": 1, "inner": {"y": 2, "z": 3}});
        merge(&mut a, json!({"inner": {"z": 4}}));
        assert_eq!(a, json!({"x": 1, "inner": {"y": 2, "z": 4}}));
    }

    #[test]
    fn retagging_replaces_the_object() {
        let mut a = json!({"hmm": {"kind": "linear_chain", "M": 2}});
        merge(&mut a, json!({"hmm": {"kind": "preset", "preset": "cyclic"}}));
        assert_eq!(a, json!({"hmm": {"kind": "preset", "preset": "cyclic"}}));
    }

    #[test]
    fn dotted_set() {
        let mut a = json!({"zones": {"cap": 50}});
        set_path(&mut a, "zones.cap", json!(40)).unwrap();
        assert_eq!(a, json!({"zones": {"cap": 40}}));
        assert_eq!(parse_set("name=abc").unwrap().1, json!("abc"));
    }
}
