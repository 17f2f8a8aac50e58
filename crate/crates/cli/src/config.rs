use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// Defaults, then the config file, then command-line flags; later layers win.
///
/// Flags are passed as an object whose `null` members were not given.
pub fn merge<C>(file: Option<&Path>, flags: Value) -> Result<(C, Value)>
where
    C: Serialize + DeserializeOwned + Default,
{
    let mut merged = serde_json::to_value(C::default())?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let layer: Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        if !layer.is_object() {
            bail!("config {} must be a JSON object", path.display());
        }
        overlay(&mut merged, layer);
    }
    overlay(&mut merged, flags);
    let config: C = serde_json::from_value(merged.clone()).context("invalid configuration")?;
    // re-serialize so the hashed form is the normalized one
    let normalized = serde_json::to_value(&config)?;
    Ok((config, normalized))
}

/// Recursively writes the non-null members of `layer` into `base`.
fn overlay(base: &mut Value, layer: Value) {
    match (base, layer) {
        (Value::Object(b), Value::Object(l)) => {
            for (k, v) in l {
                if v.is_null() {
                    continue;
                }
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => overlay(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, l) if !l.is_null() => *b = l,
        _ => {}
    }
}

/// Builds a flag layer from `(key, value)` pairs, skipping absent ones.
pub fn flags<I>(pairs: I) -> Value
where
    I: IntoIterator<Item = (&'static str, Option<Value>)>,
{
    let map: Map<String, Value> = pairs
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
        .collect();
    Value::Object(map)
}

/// Hex SHA-256 of the canonical (sorted-key, compact) JSON form.
pub fn config_hash(config: &Value) -> String {
    sha256_hex(config.to_string().as_bytes())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
