//! `--config FILE` support: `key=value` lines become flags of the selected
//! subcommand unless the same flag was given on the command line.

use std::ffi::OsString;

use clap::{Arg, Command};

#[derive(Debug, PartialEq)]
pub struct ConfigEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parses `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config(text: &str) -> Result<Vec<ConfigEntry>, String> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key=value, got {raw:?}", n + 1))?;
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(format!("config line {}: empty key", n + 1));
        }
        out.push(ConfigEntry {
            key,
            value: v.trim().to_string(),
            line: n + 1,
        });
    }
    Ok(out)
}

fn long_of(arg: &Arg) -> Option<&str> {
    arg.get_long()
}

fn find_arg<'a>(cmd: &'a Command, long: &str) -> Option<&'a Arg> {
    cmd.get_arguments().find(|a| long_of(a) == Some(long))
}

fn takes_value(arg: &Arg) -> bool {
    arg.get_action().takes_values()
}

/// The `--config` value, if present.
pub fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter().skip(1);
    while let Some(tok) = it.next() {
        let s = tok.to_string_lossy();
        if s == "--" {
            break;
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
        if s == "--config" {
            return it.next().cloned();
        }
    }
    None
}

/// Walks `argv` to the innermost subcommand, returning it and the long flag
/// names present on the command line.
fn locate<'a>(root: &'a Command, argv: &[OsString]) -> (&'a Command, Vec<String>) {
    let mut cmd = root;
    let mut given = Vec::new();
    let mut it = argv.iter().skip(1);
    while let Some(tok) = it.next() {
        let s = tok.to_string_lossy();
        if s == "--" {
            break;
        }
        if let Some(flag) = s.strip_prefix("--") {
            let (name, inline) = match flag.split_once('=') {
                Some((n, _)) => (n, true),
                None => (flag, false),
            };
            given.push(name.to_string());
            let arg = find_arg(cmd, name).or_else(|| find_arg(root, name));
            if !inline && arg.is_some_and(takes_value) {
                it.next();
            }
            continue;
        }
        if let Some(sub) = cmd.find_subcommand(s.as_ref()) {
            cmd = sub;
        }
    }
    (cmd, given)
}

/// Appends config-file flags that the command line does not already set.
pub fn expand(root: &Command, argv: Vec<OsString>, entries: &[ConfigEntry]) -> Result<Vec<OsString>, String> {
    let (cmd, given) = locate(root, &argv);
    let mut extra: Vec<OsString> = Vec::new();
    for e in entries {
        if e.key == "config" {
            return Err(format!("config line {}: nested --config is not supported", e.line));
        }
        let arg = find_arg(cmd, &e.key)
            .or_else(|| find_arg(root, &e.key).filter(|a| a.is_global_set()))
            .ok_or_else(|| {
                format!(
                    "config line {}: '{}' is not a flag of '{}'",
                    e.line,
                    e.key,
                    cmd.get_name()
                )
            })?;
        if given.iter().any(|g| g == &e.key) {
            continue;
        }
        let flag = format!("--{}", e.key);
        if takes_value(arg) {
            extra.push(flag.into());
            extra.push(e.value.clone().into());
        } else {
            match e.value.as_str() {
                "true" | "1" | "yes" | "" => extra.push(flag.into()),
                "false" | "0" | "no" => {}
                v => return Err(format!("config line {}: '{}' expects true/false, got {v:?}", e.line, e.key)),
            }
        }
    }
    let mut out = argv;
    let at = out.iter().position(|t| t == "--").unwrap_or(out.len());
    out.splice(at..at, extra);
    Ok(out)
}
