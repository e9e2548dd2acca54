//! Flat `key = value` config files and flag/file/default resolution.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// ignored; an optional `[section]` header is accepted and ignored.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty()
            || line.starts_with('#')
            || (line.starts_with('[') && line.ends_with(']'))
        {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`, got {line:?}", n + 1))?;
        let key = key.trim().replace('-', "_");
        if key.is_empty() {
            return Err(format!("line {}: empty key", n + 1));
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(format!("line {}: duplicate key {key:?}", n + 1));
        }
    }
    Ok(out)
}

/// Resolves each setting as flag, then config file, then default, and keeps
/// the effective values for the `.meta` file.
pub struct Resolver {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    effective: BTreeMap<String, String>,
}

impl Resolver {
    pub fn new(config: Option<&Path>) -> Result<Self, CliError> {
        let file = match config {
            None => BTreeMap::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::input(format!("cannot read config {}: {e}", p.display()))
                })?;
                parse_config(&text)
                    .map_err(|e| CliError::input(format!("config {}: {e}", p.display())))?
            }
        };
        Ok(Resolver {
            file,
            used: BTreeSet::new(),
            effective: BTreeMap::new(),
        })
    }

    fn from_file<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        match self.file.get(key) {
            None => Ok(None),
            Some(s) => s.parse().map(Some).map_err(|e| {
                CliError::input(format!("config key {key}: invalid value {s:?}: {e}"))
            }),
        }
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        self.used.insert(key.to_string());
        let v = match flag {
            Some(v) => v,
            None => self.from_file(key)?.unwrap_or(default),
        };
        self.effective.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// A setting without a default; missing everywhere is a usage error.
    pub fn require<T>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        self.used.insert(key.to_string());
        let v = match flag {
            Some(v) => v,
            None => self.from_file(key)?.ok_or_else(|| {
                CliError::input(format!(
                    "missing required setting `{key}` (flag --{} or config key)",
                    key.replace('_', "-")
                ))
            })?,
        };
        self.effective.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// A setting that may stay unset; unset settings are not echoed.
    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        self.used.insert(key.to_string());
        let v = match flag {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        if let Some(v) = &v {
            self.effective.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    /// A boolean switch: set by the flag, or by `key = true` in the file.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool, CliError> {
        self.used.insert(key.to_string());
        let v = flag || self.from_file::<bool>(key)?.unwrap_or(false);
        self.effective.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Fails on config keys that the subcommand never asked for.
    pub fn finish(self) -> Result<BTreeMap<String, String>, CliError> {
        let unknown: Vec<&String> = self
            .file
            .keys()
            .filter(|k| !self.used.contains(*k))
            .collect();
        if !unknown.is_empty() {
            let names: Vec<&str> = unknown.iter().map(|s| s.as_str()).collect();
            return Err(CliError::input(format!(
                "unknown config keys: {}",
                names.join(", ")
            )));
        }
        Ok(self.effective)
    }
}

/// A comma-separated list usable as a flag value and a config value.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let items = s
            .split(',')
            .map(|t| t.trim().parse::<T>().map_err(|e| format!("{t:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        if items.is_empty() {
            return Err("empty list".into());
        }
        Ok(List(items))
    }
}

impl<T: fmt::Display> fmt::Display for List<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, x) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{x}")?;
        }
        Ok(())
    }
}

/// The `.meta` file: version and command as comments, then the effective
/// settings in config syntax, so the file can be passed back as `--config`.
pub fn meta_text(command: &str, effective: &BTreeMap<String, String>, notes: &[String]) -> String {
    let mut out = format!(
        "# l4deconv {}\n# command: {command}\n",
        env!("CARGO_PKG_VERSION")
    );
    for n in notes {
        out.push_str(&format!("# {n}\n"));
    }
    for (k, v) in effective {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}
