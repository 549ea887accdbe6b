//! Plain `key = value` configuration files and flag resolution.
//!
//! A value is taken from the command-line flag if given, else from the
//! config file, else from the built-in default. Every resolved value is
//! recorded for the run manifest.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CliError, CliResult};

#[derive(Debug, Default)]
pub struct Config {
    source: Option<PathBuf>,
    values: BTreeMap<String, (usize, String)>,
}

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('_', "-")
}

impl Config {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.source = Some(path.to_path_buf());
        Ok(cfg)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::input(format!("line {}: expected 'key = value'", idx + 1)));
            };
            let key = normalize(k);
            if key.is_empty() {
                return Err(CliError::input(format!("line {}: empty key", idx + 1)));
            }
            if values.insert(key.clone(), (idx + 1, v.trim().to_string())).is_some() {
                return Err(CliError::input(format!("line {}: duplicate key '{key}'", idx + 1)));
            }
        }
        Ok(Self { source: None, values })
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }
}

/// Resolves settings against a [`Config`] and keeps the resolved snapshot.
pub struct Resolver {
    config: Config,
    resolved: Vec<(String, String)>,
}

impl Resolver {
    pub fn new(config: Option<&Path>) -> CliResult<Self> {
        let config = match config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        Ok(Self {
            config,
            resolved: Vec::new(),
        })
    }

    fn from_config<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        match self.config.values.get(key) {
            None => Ok(None),
            Some((line, raw)) => raw.parse().map(Some).map_err(|e| {
                let file = self.config.source().map(|p| p.display().to_string()).unwrap_or_default();
                CliError::input(format!("{file}: line {line}: bad value for '{key}': {e}"))
            }),
        }
    }

    fn record(&mut self, key: &str, shown: String) {
        self.resolved.push((key.to_string(), shown));
    }

    pub fn pick<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => v,
            None => self.from_config(key)?.unwrap_or(default),
        };
        self.record(key, value.to_string());
        Ok(value)
    }

    pub fn pick_opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => self.from_config(key)?,
        };
        self.record(key, value.as_ref().map_or_else(|| "none".to_string(), |v| v.to_string()));
        Ok(value)
    }

    pub fn require<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> CliResult<T>
    where
        T::Err: Display,
    {
        self.pick_opt(key, flag)?
            .ok_or_else(|| CliError::input(format!("missing required setting '--{key}'")))
    }

    pub fn path_opt(&mut self, key: &str, flag: Option<PathBuf>) -> CliResult<Option<PathBuf>> {
        let value = match flag {
            Some(v) => Some(v),
            None => self.from_config::<String>(key)?.map(PathBuf::from),
        };
        self.record(key, value.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string()));
        Ok(value)
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> CliResult<PathBuf> {
        self.path_opt(key, flag)?
            .ok_or_else(|| CliError::input(format!("missing required setting '--{key}'")))
    }

    /// Boolean switch: set by the flag, or by `key = true` in the config.
    pub fn switch(&mut self, key: &str, flag: bool) -> CliResult<bool> {
        let value = flag || self.from_config::<bool>(key)?.unwrap_or(false);
        self.record(key, value.to_string());
        Ok(value)
    }

    pub fn config_source(&self) -> Option<&Path> {
        self.config.source()
    }

    pub fn snapshot(&self) -> &[(String, String)] {
        &self.resolved
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_config_beat_defaults() {
        let config = Config::parse("# run\nburnin = 50\nkeep=20\n").unwrap();
        let mut r = Resolver {
            config,
            resolved: Vec::new(),
        };
        assert_eq!(r.pick("burnin", Some(7usize), 1).unwrap(), 7);
        assert_eq!(r.pick("keep", None, 1usize).unwrap(), 20);
        assert_eq!(r.pick("thin", None, 3usize).unwrap(), 3);
        assert_eq!(r.snapshot()[1], ("keep".to_string(), "20".to_string()));
    }

    #[test]
    fn underscores_and_case_are_folded() {
        let config = Config::parse("Beta_SD = 2.5").unwrap();
        let mut r = Resolver {
            config,
            resolved: Vec::new(),
        };
        assert_eq!(r.pick("beta-sd", None, 1.0).unwrap(), 2.5);
    }

    #[test]
    fn malformed_lines_are_reported_with_line_numbers() {
        let err = Config::parse("a = 1\nnonsense\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
        let err = Config::parse("a = 1\na = 2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn bad_values_name_the_key() {
        let mut r = Resolver {
            config: Config::parse("\nchains = three").unwrap(),
            resolved: Vec::new(),
        };
        let err = r.pick("chains", None, 1usize).unwrap_err();
        assert!(err.to_string().contains("line 2") && err.to_string().contains("chains"));
    }
}
