//! Config-file merging. A config file is a JSON object; top-level scalar keys
//! apply to every subcommand that has a flag of that name, and an object under
//! a subcommand's name applies to that subcommand only. Flags given on the
//! command line always win.

use std::path::Path;

use anyhow::{bail, Context};
use clap::parser::ValueSource;
use clap::{ArgMatches, Command};
use serde_json::{Map, Value};

pub fn load(path: &Path) -> anyhow::Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    match serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))? {
        Value::Object(m) => Ok(m),
        _ => bail!("config {} must be a JSON object", path.display()),
    }
}

fn flag_values(key: &str, v: &Value) -> anyhow::Result<Vec<String>> {
    let flag = format!("--{key}");
    Ok(match v {
        Value::Bool(true) => vec![flag],
        Value::Bool(false) | Value::Null => vec![],
        Value::String(s) => vec![flag, s.clone()],
        Value::Number(n) => vec![flag, n.to_string()],
        Value::Array(items) => {
            let mut out = Vec::new();
            for it in items {
                out.extend(flag_values(key, it)?);
            }
            out
        }
        Value::Object(_) => bail!("config key {key:?} must not be an object"),
    })
}

fn arg_id(cmd: &Command, long: &str) -> Option<String> {
    cmd.get_arguments()
        .find(|a| a.get_long() == Some(long))
        .map(|a| a.get_id().to_string())
}

/// Extra argv entries for config values whose flags were not given on the
/// command line.
pub fn extra_args(root: &Command, matches: &ArgMatches, config: &Map<String, Value>) -> anyhow::Result<Vec<String>> {
    let Some((sub_name, sub_matches)) = matches.subcommand() else {
        return Ok(Vec::new());
    };
    let sub = root.find_subcommand(sub_name).expect("parsed subcommand exists");
    let mut entries: Vec<(String, &Value)> = Vec::new();
    for (k, v) in config {
        if root.find_subcommand(k).is_some() {
            if k == sub_name {
                let Value::Object(section) = v else {
                    bail!("config section {k:?} must be an object");
                };
                entries.extend(section.iter().map(|(k, v)| (k.replace('_', "-"), v)));
            }
        } else {
            entries.push((k.replace('_', "-"), v));
        }
    }
    // Section entries come last and override top-level ones.
    let mut merged: Vec<(String, &Value)> = Vec::new();
    for (k, v) in entries {
        merged.retain(|(x, _)| *x != k);
        merged.push((k, v));
    }

    let mut out = Vec::new();
    for (key, value) in merged {
        if key == "config" {
            continue;
        }
        let (id, m) = if let Some(id) = arg_id(sub, &key) {
            (id, sub_matches)
        } else if let Some(id) = arg_id(root, &key) {
            (id, matches)
        } else {
            // Keys for other subcommands are allowed at the top level.
            let used_elsewhere = root.get_subcommands().any(|c| arg_id(c, &key).is_some());
            if used_elsewhere {
                continue;
            }
            bail!("unknown config key {key:?}");
        };
        let from_cli = m.value_source(&id) == Some(ValueSource::CommandLine)
            || sub_matches.value_source(&id) == Some(ValueSource::CommandLine);
        if !from_cli {
            out.extend(flag_values(&key, value)?);
        }
    }
    Ok(out)
}
