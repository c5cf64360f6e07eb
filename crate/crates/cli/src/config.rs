//! Flag/JSON configuration merging.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::{CliError, Result};

/// Recursively overlays `overlay` onto `base`. Objects merge key by key
/// unless they carry different `"kind"` tags; any other value replaces what
/// was there.
pub fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) if same_kind(b, &o) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn same_kind(a: &serde_json::Map<String, Value>, b: &serde_json::Map<String, Value>) -> bool {
    match (a.get("kind"), b.get("kind")) {
        (Some(x), Some(y)) => x == y,
        _ => true,
    }
}

/// Serializes the flag-derived config, applies the JSON file at `path` on
/// top and deserializes the result.
pub fn resolve<T: Serialize + DeserializeOwned>(
    from_flags: T,
    path: Option<&Path>,
) -> Result<(T, Value)> {
    let mut value =
        serde_json::to_value(&from_flags).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(p) = path {
        let text = std::fs::read_to_string(p)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
        let overlay: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
        if !overlay.is_object() {
            return Err(CliError::Config(format!(
                "{}: expected a JSON object",
                p.display()
            )));
        }
        merge(&mut value, overlay);
    }
    let cfg: T = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
    // echo the typed config so defaults filled during parsing are visible
    let echo = serde_json::to_value(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    Ok((cfg, echo))
}
