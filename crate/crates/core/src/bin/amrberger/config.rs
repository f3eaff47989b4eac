//! `key=value` config files and the resolved-config snapshot.

use std::collections::BTreeMap;
use std::fs;

use clap::CommandFactory;

use crate::{Cli, CliError};

/// Parses `key=value` lines; `#` starts a comment line.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(format!("line {}: expected key=value", i + 1));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

/// Appends config-file settings to `argv` as flags, skipping any flag the
/// command line already sets. Unprefixed keys apply when the chosen
/// subcommand (or the global flag set) has them; `sub.key` applies only to
/// `sub`.
pub fn merge_config(mut argv: Vec<String>) -> Result<Vec<String>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text =
        fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("config {path}: {e}")))?;
    let entries =
        parse_config(&text).map_err(|e| CliError::Usage(format!("config {path}: {e}")))?;

    let cmd = Cli::command();
    let globals: BTreeMap<String, bool> = flags_of(&cmd);
    let subs: BTreeMap<String, BTreeMap<String, bool>> = cmd
        .get_subcommands()
        .map(|s| (s.get_name().to_string(), flags_of(s)))
        .collect();
    let chosen = argv
        .iter()
        .skip(1)
        .find(|a| subs.contains_key(a.as_str()))
        .cloned();

    let mut extra = Vec::new();
    for (key, value) in entries {
        let (scope, flag) = match key.split_once('.') {
            Some((s, f)) => (Some(s), f),
            None => (None, key.as_str()),
        };
        if let Some(s) = scope {
            if !subs.contains_key(s) {
                return Err(CliError::Usage(format!(
                    "config {path}: unknown subcommand in `{key}`"
                )));
            }
            if chosen.as_deref() != Some(s) {
                continue;
            }
        }
        let in_sub = chosen.as_ref().and_then(|c| subs[c].get(flag));
        let takes_value = match (globals.get(flag), in_sub) {
            (Some(&t), _) | (None, Some(&t)) => t,
            (None, None) if scope.is_none() && subs.values().any(|f| f.contains_key(flag)) => {
                continue
            }
            (None, None) => {
                return Err(CliError::Usage(format!(
                    "config {path}: unknown setting `{key}`"
                )))
            }
        };
        let long = format!("--{flag}");
        let prefix = format!("{long}=");
        if argv.iter().any(|a| *a == long || a.starts_with(&prefix)) || flag == "config" {
            continue;
        }
        if takes_value {
            extra.push(long);
            extra.push(value);
        } else {
            match value.as_str() {
                "true" => extra.push(long),
                "false" => {}
                _ => {
                    return Err(CliError::Usage(format!(
                        "config {path}: `{key}` must be true or false"
                    )))
                }
            }
        }
    }
    argv.extend(extra);
    Ok(argv)
}

/// Long flag names and whether each takes a value.
fn flags_of(cmd: &clap::Command) -> BTreeMap<String, bool> {
    cmd.get_arguments()
        .filter_map(|a| Some((a.get_long()?.to_string(), a.get_action().takes_values())))
        .collect()
}

/// The parsed command line as sorted `key=value` lines, loadable again with
/// `--config`.
pub fn snapshot(cli: &Cli) -> String {
    let value = serde_json::to_value(cli).expect("cli settings serialize");
    let mut lines = BTreeMap::new();
    flatten("", &value, &mut lines);
    let sub = cli.command.name();
    let mut out = String::new();
    for (k, v) in lines {
        // the subcommand's fields sit under `command.<name>.`
        let key = k
            .strip_prefix(&format!("command.{sub}."))
            .map_or(k.clone(), |f| format!("{sub}.{f}"));
        out.push_str(&format!("{key}={v}\n"));
    }
    out
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut BTreeMap<String, String>) {
    use serde_json::Value;
    let join = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                flatten(&join(k), v, out);
            }
        }
        Value::Null => {}
        Value::String(s) => {
            out.insert(prefix.to_string(), s.clone());
        }
        Value::Array(items) => {
            let parts: Vec<String> = items
                .iter()
                .map(|i| i.as_str().map_or_else(|| i.to_string(), str::to_string))
                .collect();
            if !parts.is_empty() {
                out.insert(prefix.to_string(), parts.join(","));
            }
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}
