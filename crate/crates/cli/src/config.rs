use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

/// Flag structs whose unset fields can be filled from a config file.
pub trait Overlay: Serialize + DeserializeOwned + Default {
    fn overlay(&mut self, file: Self);
}

/// Fills `$flags.$field` from `$file` wherever the flag was not given.
#[macro_export]
macro_rules! overlay_fields {
    ($flags:ident, $file:ident; $($field:ident),* $(,)?) => {
        $( if $flags.$field.is_none() { $flags.$field = $file.$field; } )*
    };
}

/// Reads the section for `command` from a JSON config. The file is either an
/// object keyed by subcommand (plus an optional `threads`) or a flat object
/// for a single subcommand.
pub fn load_section<T: Overlay>(path: &Path, command: &str) -> Result<(T, Option<usize>), CliError> {
    let bad = |message: String| CliError::Config {
        path: path.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let root: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let Value::Object(mut map) = root else {
        return Err(bad("top level must be an object".into()));
    };
    let threads = match map.remove("threads") {
        None | Some(Value::Null) => None,
        Some(v) => Some(serde_json::from_value(v).map_err(|e| bad(format!("threads: {e}")))?),
    };
    let section = match map.remove(command) {
        Some(v) => v,
        None => Value::Object(map),
    };
    let known = known_keys::<T>();
    if let Value::Object(fields) = &section {
        if let Some(k) = fields.keys().find(|k| !known.contains(k.as_str())) {
            return Err(bad(format!("unknown key `{k}` for `{command}`")));
        }
    }
    let parsed = serde_json::from_value(section).map_err(|e| bad(e.to_string()))?;
    Ok((parsed, threads))
}

fn known_keys<T: Overlay>() -> BTreeSet<String> {
    match serde_json::to_value(T::default()) {
        Ok(Value::Object(m)) => m.into_iter().map(|(k, _)| k).collect(),
        _ => BTreeSet::new(),
    }
}

/// `dir/stem.json` next to a CSV output.
pub fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// `dir/stem-suffix.ext`.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}-{suffix}.{ext}"),
        None => format!("{stem}-{suffix}"),
    };
    path.with_file_name(name)
}
