//! Flat `key = value` configuration files. Keys mirror the long flag names
//! (`seed`, `train-fraction`, `methods`, ...). Explicit flags win over file
//! values, file values win over defaults.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use svdd::{Result, SvddError};

#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(SvddError::Config(format!("line {}: expected key = value, got {line:?}", i + 1)));
            };
            let key = key.trim().replace('_', "-");
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(SvddError::Config(format!("line {}: key {key:?} set twice", i + 1)));
            }
        }
        Ok(ConfigFile {
            values,
            used: RefCell::default(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SvddError::io(path, e))?;
        Self::parse(&text)
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.values.get(key).map(String::as_str)
    }

    /// Keys in the file that no resolution asked for.
    pub fn check_unused(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<&str> = self
            .values
            .keys()
            .filter(|k| !used.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(SvddError::Config(format!("unknown config keys: {}", unknown.join(", "))))
        }
    }
}

/// Parse failure text without a repeated "configuration error" prefix.
fn reason(e: impl Display) -> String {
    let text = e.to_string();
    match text.strip_prefix("configuration error: ") {
        Some(rest) => rest.to_string(),
        None => text,
    }
}

/// Merges flags over a config file and records what was resolved.
pub struct Resolver<'a> {
    file: &'a ConfigFile,
    resolved: Vec<(String, String)>,
}

impl<'a> Resolver<'a> {
    pub fn new(file: &'a ConfigFile) -> Self {
        Resolver {
            file,
            resolved: Vec::new(),
        }
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.file
            .raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| SvddError::Config(format!("config key {key:?}: {}", reason(e))))
            })
            .transpose()
    }

    pub fn optional<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => {
                self.file.raw(key);
                Some(v)
            }
            None => self.parsed(key)?,
        };
        if let Some(v) = &value {
            self.resolved.push((key.to_string(), v.to_string()));
        }
        Ok(value)
    }

    pub fn value<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => {
                self.file.raw(key);
                v
            }
            None => self.parsed(key)?.unwrap_or(default),
        };
        self.resolved.push((key.to_string(), value.to_string()));
        Ok(value)
    }

    pub fn required<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T::Err: Display,
    {
        self.optional(key, flag)?
            .ok_or_else(|| SvddError::Config(format!("missing required setting {key:?} (flag --{key} or config key)")))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr + Display>(&mut self, key: &str, flag: Option<Vec<T>>, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => {
                self.file.raw(key);
                v
            }
            None => match self.file.raw(key) {
                Some(text) => text
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<T>()
                            .map_err(|e| SvddError::Config(format!("config key {key:?}: {}", reason(e))))
                    })
                    .collect::<Result<Vec<_>>>()?,
                None => default,
            },
        };
        let joined: Vec<String> = value.iter().map(ToString::to_string).collect();
        self.resolved.push((key.to_string(), joined.join(",")));
        Ok(value)
    }

    /// Switch that a flag can turn on and the file can set either way.
    pub fn switch(&mut self, key: &str, flag: bool, default: bool) -> Result<bool> {
        let value = if flag {
            self.file.raw(key);
            true
        } else {
            self.parsed::<bool>(key)?.unwrap_or(default)
        };
        self.resolved.push((key.to_string(), value.to_string()));
        Ok(value)
    }

    /// Resolved settings in config-file syntax.
    pub fn render(&self) -> String {
        self.resolved.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
