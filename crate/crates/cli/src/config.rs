//! Flat `key = value` run configuration.
//!
//! Resolution order, later wins: command defaults, config file (with `include = path`
//! lines resolved relative to the including file), dedicated command-line flags, then
//! `--set key=value` overrides. Unknown keys are rejected at every stage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use raypose_core::{Error, Result};

pub const RESOLVED_FILE: &str = "config.resolved";
const MAX_INCLUDE_DEPTH: usize = 16;

/// `(key, default, description)`.
pub type Entry = (&'static str, &'static str, &'static str);

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: &'static str,
    pub values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn resolve(
        command: &'static str,
        schema: &[Entry],
        file: Option<&Path>,
        flags: &[(&str, Option<String>)],
        sets: &[String],
    ) -> Result<Self> {
        let mut cfg = Self {
            command,
            values: schema.iter().map(|(k, d, _)| (k.to_string(), d.to_string())).collect(),
        };
        if let Some(path) = file {
            let mut pairs = Vec::new();
            read_file(path, 0, &mut pairs)?;
            for (key, value, origin, line) in pairs {
                cfg.set(&key, value).map_err(|reason| Error::Parse {
                    path: origin,
                    line,
                    reason,
                })?;
            }
        }
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v.clone()).map_err(Error::Config)?;
            }
        }
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{s}`")))?;
            cfg.set(k.trim(), v.trim().to_string()).map_err(Error::Config)?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: String) -> std::result::Result<(), String> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => Err(format!("unknown key `{key}` for command `{}`", self.command)),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("`{key}` is not in the `{}` schema", self.command))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| Error::Config(format!("{key} = `{raw}`: {e}")))
    }

    pub fn get_bool(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            "true" | "on" | "yes" | "1" => Ok(true),
            "false" | "off" | "no" | "0" => Ok(false),
            other => Err(Error::Config(format!("{key} = `{other}`: expected a boolean"))),
        }
    }

    /// `None` for an empty value or `auto`.
    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            "" | "auto" => Ok(None),
            _ => self.get(key).map(Some),
        }
    }

    pub fn get_list(&self, key: &str) -> Vec<String> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect()
    }

    pub fn render(&self) -> String {
        let mut s = format!("# resolved configuration for `{}`\n", self.command);
        for (k, v) in &self.values {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn echo(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RESOLVED_FILE);
        std::fs::write(&path, self.render()).map_err(|e| Error::Io { path, source: e })
    }
}

fn read_file(path: &Path, depth: usize, out: &mut Vec<(String, String, PathBuf, usize)>) -> Result<()> {
    if depth > MAX_INCLUDE_DEPTH {
        return Err(Error::Config(format!("include nesting too deep at {}", path.display())));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: format!("expected key = value, got `{line}`"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k == "include" {
            let base = path.parent().unwrap_or(Path::new("."));
            read_file(&base.join(v), depth + 1, out)?;
        } else {
            out.push((k.to_string(), v.to_string(), path.to_path_buf(), i + 1));
        }
    }
    Ok(())
}
