//! `key = value` run configuration.
//!
//! Keys are long flag names. `train.epochs = 30` applies only to the `train`
//! subcommand; an unscoped `epochs = 30` applies to any subcommand with that
//! flag. Command-line flags take precedence over the file.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (number, raw) in (1..).zip(text.lines()) {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::input(format!("{origin}: line {number}: expected key = value")));
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(CliError::input(format!("{origin}: line {number}: empty key")));
            }
            values.insert(key.to_string(), v.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn scoped<'a>(&'a self, command: &'a str) -> Scoped<'a> {
        Scoped { file: self, command }
    }
}

/// Lookups for one subcommand.
pub struct Scoped<'a> {
    file: &'a ConfigFile,
    command: &'a str,
}

impl Scoped<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.file
            .values
            .get(&format!("{}.{key}", self.command))
            .or_else(|| self.file.values.get(key))
            .map(String::as_str)
    }

    /// The flag value if given, else the file value, else `None`.
    pub fn opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::input(format!("config key {key}: cannot parse {v:?}"))),
        }
    }

    pub fn get<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T, CliError> {
        self.opt(flag, key)?
            .ok_or_else(|| CliError::input(format!("missing required setting --{key}")))
    }

    /// A boolean switch: set by the flag, or by `key = true` in the file.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool, CliError> {
        Ok(flag || self.opt::<bool>(None, key)?.unwrap_or(false))
    }
}
