//! Key=value config files plus the `FEDKERN_SEED` fallback. Precedence:
//! command-line flag, then config file, then (for the seed) the
//! environment, then the built-in default.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::Failure;

pub struct ConfigMap {
    values: HashMap<String, String>,
}

impl ConfigMap {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let mut values = HashMap::new();
        if let Some(path) = path {
            let content = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
            for (lineno, raw) in content.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line
                    .split_once('=')
                    .ok_or_else(|| format!("line {}: expected key=value", lineno + 1))?;
                values.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Self { values })
    }

    pub fn raw(&self, key: &str) -> Option<String> {
        self.values.get(key).cloned()
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.values.get(key).map(PathBuf::from)
    }

    /// Flag value if given, else the config entry, else the default.
    pub fn pick<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, Failure>
    where
        T: FromStr,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|_| Failure::config(format!("config key `{key}`: bad value `{raw}`"))),
            None => Ok(default),
        }
    }

    /// Enum-valued config entries, matched against their flag spellings.
    pub fn parse_enum<T: Copy>(
        &self,
        key: &str,
        choices: &[(&str, T)],
    ) -> Result<Option<T>, Failure> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => choices
                .iter()
                .find(|(name, _)| name == raw)
                .map(|&(_, v)| Some(v))
                .ok_or_else(|| {
                    let names: Vec<&str> = choices.iter().map(|&(n, _)| n).collect();
                    Failure::config(format!(
                        "config key `{key}`: `{raw}` is not one of {names:?}"
                    ))
                }),
        }
    }

    /// Seed precedence: flag, config file, FEDKERN_SEED, default 42.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64, Failure> {
        if let Some(s) = flag {
            return Ok(s);
        }
        if let Some(raw) = self.values.get("seed") {
            return raw
                .parse()
                .map_err(|_| Failure::config(format!("config key `seed`: bad value `{raw}`")));
        }
        match std::env::var("FEDKERN_SEED") {
            Ok(raw) => raw
                .parse()
                .map_err(|_| Failure::config(format!("FEDKERN_SEED: bad value `{raw}`"))),
            Err(_) => Ok(42),
        }
    }
}
