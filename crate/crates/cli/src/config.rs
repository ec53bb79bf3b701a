//! JSON config files: each key names a long flag; flags on the command line win.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::Value;

use crate::CliError;

/// Value of `--config` in the raw arguments, if any.
pub fn find_config(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(rest) = s.strip_prefix("--config=") {
            return Some(rest.into());
        }
        if s == "--" {
            break;
        }
    }
    None
}

/// Flag tokens for every entry of a JSON object.
pub fn config_tokens(v: &Value) -> Result<Vec<OsString>> {
    let obj = match v {
        Value::Object(m) => m,
        _ => bail!(CliError::Usage("config file must contain a JSON object".into())),
    };
    let mut out = Vec::new();
    for (k, v) in obj {
        let flag = format!("--{}", k.replace('_', "-"));
        if flag == "--config" {
            continue;
        }
        match v {
            Value::Bool(true) => out.push(flag.into()),
            Value::Bool(false) | Value::Null => {}
            Value::Number(n) => {
                out.push(flag.into());
                out.push(n.to_string().into());
            }
            Value::String(s) => {
                out.push(flag.into());
                out.push(s.into());
            }
            Value::Array(items) => {
                let mut parts = Vec::with_capacity(items.len());
                for item in items {
                    match item {
                        Value::Number(n) => parts.push(n.to_string()),
                        Value::String(s) => parts.push(s.clone()),
                        _ => bail!(CliError::Usage(format!(
                            "config key `{k}`: arrays may hold numbers or strings only"
                        ))),
                    }
                }
                out.push(flag.into());
                out.push(parts.join(",").into());
            }
            Value::Object(_) => bail!(CliError::Usage(format!(
                "config key `{k}`: nested objects are not supported"
            ))),
        }
    }
    Ok(out)
}

pub fn load_tokens(path: &Path) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(|e| CliError::Data(format!("{e:#}")))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    config_tokens(&v)
}

/// Inserts `extra` right after the subcommand name so later command-line
/// flags override them.
pub fn merge(args: Vec<OsString>, extra: Vec<OsString>, subcommands: &[&str]) -> Vec<OsString> {
    if extra.is_empty() {
        return args;
    }
    let pos = args
        .iter()
        .skip(1)
        .position(|a| subcommands.iter().any(|s| a == s))
        .map(|p| p + 2);
    match pos {
        Some(p) => {
            let mut out = args[..p].to_vec();
            out.extend(extra);
            out.extend_from_slice(&args[p..]);
            out
        }
        None => args,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn tokens_from_object() {
        let v: Value = serde_json::json!({"epochs": 3, "hidden": [4, 2], "original": true, "x": false, "threshold_from": "a.json"});
        let t = config_tokens(&v).unwrap();
        assert_eq!(
            t,
            os(&["--epochs", "3", "--hidden", "4,2", "--original", "--threshold-from", "a.json"])
        );
    }

    #[test]
    fn merge_places_config_before_user_flags() {
        let args = os(&["gpdflow", "--seed", "1", "fit", "--epochs", "5"]);
        let m = merge(args, os(&["--epochs", "3"]), &["fit"]);
        assert_eq!(m, os(&["gpdflow", "--seed", "1", "fit", "--epochs", "3", "--epochs", "5"]));
    }

    #[test]
    fn finds_config_path() {
        assert_eq!(find_config(&os(&["g", "--config", "c.json"])), Some("c.json".into()));
        assert_eq!(find_config(&os(&["g", "--config=c.json"])), Some("c.json".into()));
        assert_eq!(find_config(&os(&["g", "fit"])), None);
    }
}
