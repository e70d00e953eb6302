//! `--config FILE`: `key=value` lines that supply defaults for flags.
//!
//! Keys are long flag names without the dashes (`max-deg=0.02`). Blank lines
//! and lines starting with `#` are skipped. Flags given on the command line
//! win, and keys the chosen subcommand does not take are ignored, so one file
//! can serve the whole pipeline. Keys no subcommand takes are an error.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;

use clap::{ArgAction, CommandFactory};

use crate::args::Cli;

fn parse(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("config line {}: expected key=value", i + 1))?;
        out.push((k.trim().trim_start_matches("--").to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

fn given(argv: &[OsString], key: &str) -> bool {
    let flag = format!("--{key}");
    argv.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&format!("{flag}="))
    })
}

/// `argv` with the config-file defaults appended.
pub fn merged_args(argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&argv) else { return Ok(argv) };
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read config {}: {e}", path.to_string_lossy()))?;
    let entries = parse(&text)?;

    let cmd = Cli::command();
    let globals: Vec<&clap::Arg> = cmd.get_arguments().collect();
    let sub = argv.iter().skip(1).find_map(|a| cmd.find_subcommand(a.to_string_lossy().as_ref()));
    let known: BTreeSet<String> = cmd
        .get_subcommands()
        .flat_map(|s| s.get_arguments())
        .chain(globals.iter().copied())
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect();

    let mut out = argv.clone();
    for (key, value) in entries {
        if !known.contains(&key) {
            return Err(format!("unknown config key `{key}`"));
        }
        if key == "config" || given(&argv, &key) {
            continue;
        }
        let arg = sub
            .and_then(|s| s.get_arguments().find(|a| a.get_long() == Some(key.as_str())))
            .or_else(|| globals.iter().copied().find(|a| a.get_long() == Some(key.as_str())));
        let Some(arg) = arg else { continue };
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" => out.push(format!("--{key}").into()),
                "false" => {}
                _ => return Err(format!("config key `{key}` takes true or false")),
            }
        } else {
            out.push(format!("--{key}={value}").into());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn parses_lines() {
        let e = parse("# c\n\nepochs = 5\n--lr=0.1\n").unwrap();
        assert_eq!(e, vec![("epochs".into(), "5".into()), ("lr".into(), "0.1".into())]);
        assert!(parse("epochs 5").is_err());
    }

    #[test]
    fn command_line_wins_and_foreign_keys_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        fs::write(&p, "max-deg=0.02\npenalty=10\ndump-components=true\nfidelity-k=1,2\n").unwrap();
        let argv = os(&["iic", "explain", "--config", p.to_str().unwrap(), "--penalty", "30"]);
        let merged = merged_args(argv.clone()).unwrap();
        let extra: Vec<String> = merged[argv.len()..].iter().map(|s| s.to_string_lossy().into_owned()).collect();
        assert_eq!(extra, vec!["--max-deg=0.02", "--dump-components"]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        fs::write(&p, "bogus=1\n").unwrap();
        assert!(merged_args(os(&["iic", "report", "--config", p.to_str().unwrap()])).is_err());
        assert_eq!(merged_args(os(&["iic", "report"])).unwrap(), os(&["iic", "report"]));
    }
}
