//! Layered settings: built-in defaults, then a JSON config file, then flags.

use std::fs;
use std::path::Path;

use neurotok::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub const SNAPSHOT: &str = "config.resolved.json";

fn merge(base: &mut Value, over: Value, path: &str) -> Result<()> {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v, &key)?,
                    Some(slot) => *slot = v,
                    None => return Err(Error::Config(format!("unknown config key {key:?}"))),
                }
            }
            Ok(())
        }
        (b, o) => {
            *b = o;
            Ok(())
        }
    }
}

/// Resolves a command's settings. `overrides` holds only the flags that were given.
pub fn resolve<T: Serialize + DeserializeOwned + Default>(file: Option<&Path>, overrides: Value) -> Result<T> {
    let mut value = serde_json::to_value(T::default())?;
    if let Some(path) = file {
        let text = fs::read_to_string(path)?;
        let parsed: Value = serde_json::from_str(&text)?;
        if !parsed.is_object() {
            return Err(Error::Config(format!("{} is not a JSON object", path.display())));
        }
        merge(&mut value, parsed, "")?;
    }
    merge(&mut value, overrides, "")?;
    serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
}

/// Writes `{ "command": ..., "config": ... }` into `out`.
pub fn snapshot<T: Serialize>(out: &Path, command: &str, cfg: &T) -> Result<()> {
    let mut m = Map::new();
    m.insert("command".into(), Value::String(command.into()));
    m.insert("config".into(), serde_json::to_value(cfg)?);
    fs::write(out.join(SNAPSHOT), serde_json::to_string_pretty(&Value::Object(m))? + "\n")?;
    Ok(())
}
