//! `--config file.json` is rewritten into ordinary flags before clap sees the
//! command line, so a config file and the equivalent flags parse identically
//! and unknown keys are rejected as unknown flags.

use std::fs;

use serde_json::Value;

use crate::args::{COMMANDS, VALUED_GLOBALS};
use crate::error::CliError;

pub fn expand(args: Vec<String>) -> Result<Vec<String>, CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut path = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            let p = it
                .next()
                .ok_or_else(|| CliError::Parse("--config needs a file".into()))?;
            path = Some(p);
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };

    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Parse(format!("cannot read config {path}: {e}")))?;
    let map = match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(m)) => m,
        Ok(_) => {
            return Err(CliError::Parse(format!(
                "config {path} must be a JSON object"
            )))
        }
        Err(e) => return Err(CliError::Parse(format!("config {path}: {e}"))),
    };

    let mut command = None;
    let mut flags = Vec::new();
    for (key, value) in map {
        if key == "command" {
            match value {
                Value::String(s) => command = Some(s),
                _ => {
                    return Err(CliError::Parse(
                        "config key \"command\" must be a string".into(),
                    ))
                }
            }
            continue;
        }
        let flag = format!("--{}", key.replace('_', "-"));
        push_flag(&mut flags, &flag, value)?;
    }

    let at = subcommand_position(&rest);
    match (at, command) {
        (Some(i), Some(c)) if rest[i] != c => Err(CliError::Parse(format!(
            "config names command {c:?} but the command line runs {:?}",
            rest[i]
        ))),
        (Some(i), _) => {
            rest.splice(i + 1..i + 1, flags);
            Ok(rest)
        }
        (None, Some(c)) => {
            rest.push(c);
            rest.extend(flags);
            Ok(rest)
        }
        // let clap report the missing subcommand
        (None, None) => Ok(rest),
    }
}

fn push_flag(out: &mut Vec<String>, flag: &str, value: Value) -> Result<(), CliError> {
    match value {
        Value::Null | Value::Bool(false) => {}
        Value::Bool(true) => out.push(flag.to_string()),
        Value::String(s) => out.extend([flag.to_string(), s]),
        Value::Number(n) => out.extend([flag.to_string(), n.to_string()]),
        // a nested object is passed through as inline JSON (e.g. the spec)
        v @ Value::Object(_) => out.extend([flag.to_string(), v.to_string()]),
        Value::Array(items) => {
            for item in items {
                if matches!(item, Value::Array(_)) {
                    return Err(CliError::Parse(format!("nested array for {flag}")));
                }
                push_flag(out, flag, item)?;
            }
        }
    }
    Ok(())
}

fn subcommand_position(args: &[String]) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        let a = args[i].as_str();
        if COMMANDS.contains(&a) {
            return Some(i);
        }
        i += if VALUED_GLOBALS.contains(&a) { 2 } else { 1 };
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn with_config(json: &str, line: &str) -> Result<Vec<String>, CliError> {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(json.as_bytes()).unwrap();
        let line = line.replace("CFG", f.path().to_str().unwrap());
        expand(argv(&line))
    }

    #[test]
    fn no_config_is_identity() {
        let a = argv("tandem threshold --mu1 0.9 --mu2 1.1");
        assert_eq!(expand(a.clone()).unwrap(), a);
    }

    #[test]
    fn flags_land_after_the_subcommand() {
        let got = with_config(
            r#"{"mu1": 0.9, "mu2": 1.1}"#,
            "tandem --seed 3 threshold --config CFG --mu2 2",
        )
        .unwrap();
        assert_eq!(
            got,
            argv("tandem --seed 3 threshold --mu1 0.9 --mu2 1.1 --mu2 2")
        );
    }

    #[test]
    fn command_key_and_nested_spec() {
        let got = with_config(
            r#"{"command": "analyze", "spec": {"lambda": {"cycle": [1]}, "mu1": 1, "mu2": 2}}"#,
            "tandem --config=CFG",
        )
        .unwrap();
        assert_eq!(got[1], "analyze");
        assert_eq!(got[2], "--spec");
        assert!(got[3].starts_with('{'));
    }

    #[test]
    fn snake_case_keys_and_booleans() {
        let got = with_config(
            r#"{"max_level": 10, "flag": true, "off": false}"#,
            "tandem lyapunov --config CFG",
        )
        .unwrap();
        // keys are visited in sorted order
        assert_eq!(got, argv("tandem lyapunov --flag --max-level 10"));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(with_config("[1, 2]", "tandem threshold --config CFG").is_err());
        assert!(with_config(r#"{"command": "analyze"}"#, "tandem threshold --config CFG").is_err());
        assert!(expand(argv("tandem threshold --config")).is_err());
        assert!(expand(argv("tandem threshold --config /definitely/missing.json")).is_err());
    }
}
