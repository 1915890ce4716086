//! Effective configuration: defaults, then the config file, then flags,
//! then `key=value` overrides.

use std::fmt;
use std::path::Path;

use serde_json::{Map, Value};
use tequila_core::{Scheme, TrainConfig};

/// Rejected configuration input (unknown key, bad value, unreadable file).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn read_file(path: &Path) -> Result<Map<String, Value>, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let is_toml = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let value: Value = if is_toml {
        let t: toml::Value =
            toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        serde_json::to_value(t).map_err(|e| ConfigError(e.to_string()))?
    } else {
        serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?
    };
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(ConfigError(format!("{} must hold a table of settings", path.display()))),
    }
}

/// Parses `key=value`; the value is read as JSON when possible and as a bare
/// string otherwise, so `scheme=twn` and `widths=[64,64]` both work.
pub fn parse_override(s: &str) -> Result<(String, Value), ConfigError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("override `{s}` is not of the form key=value")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(ConfigError(format!("override `{s}` has an empty key")));
    }
    let v = v.trim();
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

/// Either a plain configuration error or a core error such as an unknown
/// scheme name.
#[derive(Debug)]
pub enum ConfigIssue {
    Config(ConfigError),
    Core(tequila_core::Error),
}

impl From<ConfigError> for ConfigIssue {
    fn from(e: ConfigError) -> Self {
        ConfigIssue::Config(e)
    }
}

impl From<ConfigIssue> for anyhow::Error {
    fn from(e: ConfigIssue) -> Self {
        match e {
            ConfigIssue::Config(e) => e.into(),
            ConfigIssue::Core(e) => e.into(),
        }
    }
}

pub fn resolve(
    file: Option<&Path>,
    flags: Vec<(&str, Value)>,
    overrides: &[String],
) -> Result<TrainConfig, ConfigIssue> {
    let mut merged = match serde_json::to_value(TrainConfig::default()) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("config serializes to an object"),
    };
    if let Some(path) = file {
        merged.extend(read_file(path)?);
    }
    for (k, v) in flags {
        merged.insert(k.to_string(), v);
    }
    for o in overrides {
        let (k, v) = parse_override(o)?;
        merged.insert(k, v);
    }
    if let Some(Value::String(name)) = merged.get("scheme") {
        name.parse::<Scheme>().map_err(ConfigIssue::Core)?;
    }
    let config: TrainConfig =
        serde_json::from_value(Value::Object(merged)).map_err(|e| ConfigError(e.to_string()))?;
    config
        .granularity()
        .map_err(|e| ConfigError(e.to_string()))?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn overrides_win_over_file_and_flags() {
        let mut f = tempfile::Builder::new().suffix(".toml").tempfile().unwrap();
        writeln!(f, "seed = 4\nsteps = 10\nwidths = [8, 4]").unwrap();
        let cfg = resolve(
            Some(f.path()),
            vec![("seed", Value::from(5))],
            &["seed=6".into(), "scheme=twn".into()],
        )
        .unwrap();
        assert_eq!(cfg.seed, 6);
        assert_eq!(cfg.steps, 10);
        assert_eq!(cfg.widths, vec![8, 4]);
        assert_eq!(cfg.scheme, tequila_core::Scheme::Twn);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(resolve(None, vec![], &["stepz=3".into()]).is_err());
        assert!(matches!(
            resolve(None, vec![], &["scheme=ternary-magic".into()]),
            Err(ConfigIssue::Core(tequila_core::Error::UnsupportedScheme(_)))
        ));
        assert!(resolve(None, vec![], &["no-equals".into()]).is_err());
        let mut f = tempfile::Builder::new().suffix(".json").tempfile().unwrap();
        write!(f, "{{\"learning_rat\": 0.1}}").unwrap();
        assert!(resolve(Some(f.path()), vec![], &[]).is_err());
    }
}
