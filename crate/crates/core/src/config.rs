//! Flat configuration files: JSON objects whose keys are dotted paths into
//! the nested config types (`"model.family": "rssm"`), plus `key=value`
//! overrides.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::agent::AgentConfig;
use crate::error::{Error, Result};

/// Nested objects become dotted keys; arrays and scalars are leaves.
pub fn flatten(value: &Value) -> Map<String, Value> {
    fn walk(prefix: &str, v: &Value, out: &mut Map<String, Value>) {
        match v {
            Value::Object(m) if !m.is_empty() || prefix.is_empty() => {
                for (k, child) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            _ => {
                out.insert(prefix.to_string(), v.clone());
            }
        }
    }
    let mut out = Map::new();
    walk("", value, &mut out);
    out
}

pub fn unflatten(flat: &Map<String, Value>) -> Result<Value> {
    let mut root = Map::new();
    for (key, v) in flat {
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::config(format!("malformed key `{key}`")));
        }
        let mut node = &mut root;
        for p in &parts[..parts.len() - 1] {
            let slot = node.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
            node = slot
                .as_object_mut()
                .ok_or_else(|| Error::config(format!("key `{key}` conflicts with a value at `{p}`")))?;
        }
        let last = parts[parts.len() - 1];
        if node.get(last).is_some_and(Value::is_object) {
            return Err(Error::config(format!("key `{key}` conflicts with nested keys")));
        }
        node.insert(last.to_string(), v.clone());
    }
    Ok(Value::Object(root))
}

/// Pretty JSON with one dotted key per resolved field.
pub fn to_flat_json<T: Serialize>(cfg: &T) -> Result<String> {
    let flat = flatten(&serde_json::to_value(cfg)?);
    Ok(serde_json::to_string_pretty(&Value::Object(flat))? + "\n")
}

/// Parses `key=value`; the value is read as JSON when possible and as a
/// plain string otherwise (`model.family=rnn`).
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{s}` is not key=value")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(Error::config(format!("override `{s}` has an empty key")));
    }
    let value = serde_json::from_str(v.trim()).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

/// Builds a config from defaults, a flat (or nested) JSON document and
/// overrides, in increasing priority. Unknown keys are errors.
pub fn build<T: Serialize + DeserializeOwned + Default>(doc: Option<&Value>, overrides: &[(String, Value)]) -> Result<T> {
    let mut flat = flatten(&serde_json::to_value(T::default())?);
    if let Some(doc) = doc {
        if !doc.is_object() {
            return Err(Error::config("config file must hold a JSON object"));
        }
        for (k, v) in flatten(doc) {
            if !flat.contains_key(&k) {
                return Err(Error::config(format!("unknown config key `{k}`")));
            }
            flat.insert(k, v);
        }
    }
    for (k, v) in overrides {
        if !flat.contains_key(k) {
            return Err(Error::config(format!("unknown config key `{k}`")));
        }
        flat.insert(k.clone(), v.clone());
    }
    serde_json::from_value(unflatten(&flat)?).map_err(|e| Error::config(e.to_string()))
}

pub fn load_agent_config(path: &Path, overrides: &[(String, Value)]) -> Result<AgentConfig> {
    let text = std::fs::read_to_string(path)?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    build(Some(&doc), overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_round_trip_of_defaults() {
        let cfg = AgentConfig::default();
        let text = to_flat_json(&cfg).unwrap();
        let doc: Value = serde_json::from_str(&text).unwrap();
        assert!(doc.get("model.family").is_some());
        assert!(doc.get("planner.action_low").unwrap().is_array());
        let back: AgentConfig = build(Some(&doc), &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_take_priority() {
        let doc = serde_json::json!({"seed": 4, "model.family": "ssm", "planner": {"horizon": 5}});
        let ov = vec![
            parse_override("seed=9").unwrap(),
            parse_override("model.family=rnn").unwrap(),
        ];
        let cfg: AgentConfig = build(Some(&doc), &ov).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model.family, crate::models::Family::Rnn);
        assert_eq!(cfg.planner.horizon, 5);
    }

    #[test]
    fn unknown_and_malformed_keys_fail() {
        let doc = serde_json::json!({"model.widht": 3});
        assert!(build::<AgentConfig>(Some(&doc), &[]).is_err());
        assert!(parse_override("noequals").is_err());
        assert!(build::<AgentConfig>(None, &[("seed".into(), Value::String("x".into()))]).is_err());
        assert!(unflatten(&flatten(&serde_json::json!({"a..b": 1}))).is_err());
    }
}
