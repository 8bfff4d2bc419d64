//! `--config` expansion: JSON keys become flags inserted ahead of the user's
//! own, skipping any flag the user already gave.

use std::collections::HashSet;
use std::ffi::OsString;
use std::path::Path;

use serde_json::Value;

/// Replaces `--config FILE` (or `--config=FILE`) after the subcommand with
/// the flags it describes. Relative paths inside the file are resolved
/// against the file's directory.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(sub) = args.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')).map(|i| i + 1) else {
        return Ok(args);
    };
    let mut rest: Vec<OsString> = Vec::new();
    let mut config = None;
    let mut it = args[sub + 1..].iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            match it.next() {
                Some(p) => config = Some(p.clone()),
                None => return Err("--config needs a file".into()),
            }
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(p.into());
        } else {
            rest.push(a.clone());
        }
    }
    let Some(path) = config else {
        return Ok(args);
    };
    let given: HashSet<String> = rest
        .iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();

    let mut out = args[..=sub].to_vec();
    out.extend(flags_from_file(Path::new(&path), &given)?);
    out.extend(rest);
    Ok(out)
}

fn flags_from_file(path: &Path, given: &HashSet<String>) -> Result<Vec<OsString>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))?;
    let Value::Object(map) = value else {
        return Err(format!("config {}: expected a JSON object", path.display()));
    };
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (key, v) in map {
        let flag = key.replace('_', "-");
        if flag == "config" {
            return Err("config files cannot nest --config".into());
        }
        if given.contains(&flag) {
            continue;
        }
        let text = match v {
            Value::Null | Value::Bool(false) => continue,
            Value::Bool(true) => {
                out.push(format!("--{flag}").into());
                continue;
            }
            Value::String(s) => resolve(base, &flag, s),
            Value::Number(n) => n.to_string(),
            Value::Array(items) => items
                .into_iter()
                .map(|i| match i {
                    Value::String(s) => Ok(resolve(base, &flag, s)),
                    Value::Number(n) => Ok(n.to_string()),
                    other => Err(format!("config key `{key}`: unsupported list item {other}")),
                })
                .collect::<Result<Vec<_>, _>>()?
                .join(","),
            Value::Object(_) => return Err(format!("config key `{key}`: nested objects are not flags")),
        };
        out.push(format!("--{flag}").into());
        out.push(text.into());
    }
    Ok(out)
}

/// Joins relative paths for flags that name files.
fn resolve(base: &Path, flag: &str, value: String) -> String {
    let is_path = matches!(flag, "material" | "bispec" | "out" | "report" | "params" | "pick-out" | "float-out" | "a" | "b" | "export-dir")
        || flag.ends_with("-map");
    if is_path && Path::new(&value).is_relative() && !base.as_os_str().is_empty() {
        base.join(value).to_string_lossy().into_owned()
    } else {
        value
    }
}
