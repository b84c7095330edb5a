//! Flat `key=value` config files and flag/file/env merging.
//!
//! Every subcommand flag may also be set in the config file under the same
//! name (without the leading dashes); command-line flags win. The seed
//! additionally falls back to the `T2LC_SEED` environment variable.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};

#[derive(Debug, Default, Clone)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn load(path: &Path) -> Result<ConfigMap> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut values = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                anyhow!("{}:{}: expected key=value, got {line:?}", path.display(), lineno + 1)
            })?;
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ConfigMap { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| anyhow!("config key {key}={raw:?} does not parse")),
        }
    }

    /// flag > config file > default.
    pub fn resolve<T: FromStr + Clone>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(flag.or(self.get(key)?).unwrap_or(default))
    }

    /// flag > config file > `T2LC_SEED` > default.
    pub fn resolve_seed(&self, flag: Option<u64>, default: u64) -> Result<u64> {
        if let Some(seed) = flag.or(self.get("seed")?) {
            return Ok(seed);
        }
        match std::env::var("T2LC_SEED") {
            Ok(raw) => raw
                .parse()
                .map_err(|_| anyhow!("T2LC_SEED={raw:?} does not parse as u64")),
            Err(_) => Ok(default),
        }
    }

    /// The effective configuration echoed in output headers.
    pub fn echo(&self, effective: &[(&str, String)]) -> String {
        effective
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Parse a comma-separated list, e.g. `1,2,4,8`.
pub fn parse_list<T: FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(|s| s.trim().parse().map_err(|_| anyhow!("bad {what} entry {s:?} in {raw:?}")))
        .collect()
}

/// Parse learning-rate drops like `22:0.1,40:0.5`.
pub fn parse_drops(raw: &str) -> Result<Vec<(usize, f64)>> {
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|pair| {
            let (e, m) = pair
                .split_once(':')
                .ok_or_else(|| anyhow!("bad lr drop {pair:?}, want epoch:multiplier"))?;
            Ok((
                e.trim().parse().map_err(|_| anyhow!("bad drop epoch {e:?}"))?,
                m.trim().parse().map_err(|_| anyhow!("bad drop multiplier {m:?}"))?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn file_parsing_and_precedence() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# comment\nepochs = 12\nlr=0.25").unwrap();
        let cfg = ConfigMap::load(f.path()).unwrap();
        assert_eq!(cfg.resolve(None::<usize>, "epochs", 30).unwrap(), 12);
        assert_eq!(cfg.resolve(Some(7usize), "epochs", 30).unwrap(), 7);
        assert_eq!(cfg.resolve(None::<f64>, "lr", 0.1).unwrap(), 0.25);
        assert_eq!(cfg.resolve(None::<f64>, "momentum", 0.9).unwrap(), 0.9);
    }

    #[test]
    fn lists_and_drops() {
        assert_eq!(parse_list::<usize>("1,2,4", "groups").unwrap(), vec![1, 2, 4]);
        assert!(parse_list::<usize>("1,x", "groups").is_err());
        assert_eq!(parse_drops("22:0.1").unwrap(), vec![(22, 0.1)]);
        assert!(parse_drops("22").is_err());
    }
}
