//! `--config` files: flat `key = value` lines whose keys are flag names.
//! Entries are appended to the command line as flags unless that flag was
//! already given, so explicit flags win over the file and the file wins over
//! built-in defaults.

use std::ffi::OsString;
use std::path::Path;

use crate::CliError;

pub fn parse_config(text: &str, path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "{}:{}: expected `key = value`, got {raw:?}",
                path.display(),
                i + 1
            )));
        };
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(CliError::Usage(format!("{}:{}: bad key {k:?}", path.display(), i + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn flag_given(argv: &[OsString], flag: &str) -> bool {
    argv.iter().any(|a| {
        let a = a.to_string_lossy();
        a == flag || a.starts_with(&format!("{flag}="))
    })
}

/// Removes `--config PATH` from `argv` and appends the file's entries.
pub fn expand_config(mut argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(pos) = argv.iter().position(|a| a == "--config" || a.to_string_lossy().starts_with("--config=")) else {
        return Ok(argv);
    };
    let arg = argv.remove(pos).to_string_lossy().into_owned();
    let path = match arg.strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => {
            if pos >= argv.len() {
                return Err(CliError::Usage("--config needs a path".into()));
            }
            argv.remove(pos).to_string_lossy().into_owned()
        }
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    for (key, value) in parse_config(&text, path)? {
        let flag = format!("--{key}");
        if flag_given(&argv, &flag) {
            continue;
        }
        match value.as_str() {
            "true" => argv.push(flag.into()),
            "false" => {}
            _ => {
                argv.push(flag.into());
                argv.push(value.into());
            }
        }
    }
    Ok(argv)
}
