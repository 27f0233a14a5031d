//! Flag / config-file resolution. Config files are flat `key = value` text
//! with `#` comments; keys are flag names without the leading dashes.
//! Command-line flags win over file values, file values over defaults.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CliError, CliResult};
use crate::output::write_atomic;

pub fn parse_config(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::usage(format!("config line {}: expected key = value", i + 1))
        })?;
        let key = k.trim().trim_start_matches("--").to_string();
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::usage(format!("config key {key} given twice")));
        }
    }
    Ok(map)
}

pub struct Resolver {
    command: &'static str,
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    resolved: Vec<(String, String)>,
}

impl Resolver {
    pub fn new(command: &'static str, config: Option<&Path>) -> CliResult<Self> {
        let file = match config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            command,
            file,
            used: BTreeSet::new(),
            resolved: Vec::new(),
        })
    }

    fn file_value<T: FromStr>(&mut self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        let Some(v) = self.file.get(key) else {
            return Ok(None);
        };
        self.used.insert(key.to_string());
        v.parse::<T>()
            .map(Some)
            .map_err(|e| CliError::usage(format!("config key {key}: {e}")))
    }

    fn record(&mut self, key: &str, value: impl Display) {
        self.resolved.push((key.to_string(), value.to_string()));
    }

    pub fn get<T: FromStr + Display>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> CliResult<T>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.record(key, &v);
        Ok(v)
    }

    pub fn optional<T: FromStr + Display>(
        &mut self,
        key: &str,
        flag: Option<T>,
    ) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.file_value(key)?,
        };
        if let Some(v) = &v {
            self.record(key, v);
        }
        Ok(v)
    }

    pub fn required<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> CliResult<T>
    where
        T::Err: Display,
    {
        self.optional(key, flag)?
            .ok_or_else(|| CliError::usage(format!("--{key} is required")))
    }

    pub fn switch(&mut self, key: &str, flag: bool) -> CliResult<bool> {
        let v = flag || self.file_value::<bool>(key)?.unwrap_or(false);
        self.record(key, v);
        Ok(v)
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> CliResult<Option<PathBuf>> {
        Ok(self
            .optional::<String>(key, flag.map(|p| p.display().to_string()))?
            .map(PathBuf::from))
    }

    /// Seed from flag or file, otherwise freshly drawn. Always echoed.
    pub fn seed(&mut self, flag: Option<u64>) -> CliResult<u64> {
        let seed = match flag {
            Some(s) => s,
            None => self.file_value("seed")?.unwrap_or_else(rand::random::<u64>),
        };
        eprintln!("seed: {seed}");
        self.record("seed", seed);
        Ok(seed)
    }

    /// Rejects config keys that no option consumed.
    pub fn finish(&self) -> CliResult<()> {
        let unknown: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !self.used.contains(*k) && !self.resolved.iter().any(|(r, _)| r == *k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::usage(format!(
                "unknown config keys for {}: {}",
                self.command,
                unknown.join(", ")
            )))
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# resolved configuration: gqst {}\n", self.command);
        for (k, v) in &self.resolved {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Writes the resolved configuration next to `out` as `<out>.config`.
    pub fn write_sidecar(&self, out: &Path) -> CliResult<PathBuf> {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".config");
        let path = out.with_file_name(name);
        let text = self.to_text();
        write_atomic(&path, |w| Ok(w.write_all(text.as_bytes())?))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_parses_comments_and_dashes() {
        let m = parse_config("# header\ncount = 10  # inline\n--points=64\n\n").unwrap();
        assert_eq!(m["count"], "10");
        assert_eq!(m["points"], "64");
        assert!(parse_config("count 10").is_err());
        assert!(parse_config("a=1\na=2").is_err());
    }

    #[test]
    fn flags_override_file() {
        let mut r = Resolver {
            command: "t",
            file: parse_config("count = 10\nlr = 0.5").unwrap(),
            used: BTreeSet::new(),
            resolved: Vec::new(),
        };
        assert_eq!(r.get("count", Some(3u64), 1).unwrap(), 3);
        assert_eq!(r.get("lr", None, 1.0).unwrap(), 0.5);
        assert_eq!(r.get("epochs", None, 7usize).unwrap(), 7);
        r.finish().unwrap();
        assert!(r.to_text().contains("count = 3\n"));
        r.file.insert("bogus".into(), "1".into());
        assert!(matches!(r.finish(), Err(CliError::Usage(_))));
    }
}
