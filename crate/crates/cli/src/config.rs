//! `key = value` experiment files. Every key names a long flag of the
//! subcommand being run; the pairs are spliced into the argument list
//! ahead of the user's own flags, so anything given on the command line
//! wins.

use std::path::Path;

use anyhow::{bail, Context, Result};

/// Parses config text into flag tokens. `true` turns a switch on, `false`
/// leaves it off.
pub fn config_args(text: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected key = value, got {raw:?}", n + 1);
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim().trim_matches('"');
        if key.is_empty() || key.starts_with('-') {
            bail!("line {}: bad key {key:?}", n + 1);
        }
        if key == "config" {
            bail!("line {}: config files cannot include other config files", n + 1);
        }
        match value {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            _ => {
                out.push(format!("--{key}"));
                out.push(value.to_string());
            }
        }
    }
    Ok(out)
}

/// Finds the value of `--config` anywhere in `argv`.
fn config_path(argv: &[String]) -> Option<&str> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--" {
            break;
        }
        if a == "--config" {
            return it.next().map(String::as_str);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p);
        }
    }
    None
}

/// Returns `argv` with the config file's flags inserted right after the
/// subcommand name.
pub fn expand(argv: Vec<String>, subcommands: &[&str]) -> Result<Vec<String>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(Path::new(path)).with_context(|| format!("reading config file {path}"))?;
    let extra = config_args(&text).with_context(|| format!("in config file {path}"))?;
    let Some(pos) = argv.iter().skip(1).position(|a| subcommands.contains(&a.as_str())) else {
        return Ok(argv);
    };
    let at = pos + 2;
    let mut out = argv[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}
