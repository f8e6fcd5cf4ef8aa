//! `key = value` settings files. Keys are the long flag names; a flag given
//! on the command line overrides the file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};

/// Bad invocation: reported with exit status 64.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Default)]
pub struct Settings {
    source: Option<PathBuf>,
    /// Unconsumed entries with their line numbers.
    entries: BTreeMap<String, (String, usize)>,
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(path, &content)
    }

    pub fn parse(path: &Path, content: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in content.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("{}:{}: expected `key = value`", path.display(), i + 1)))?;
            let key = key.trim().replace('_', "-");
            if entries.insert(key.clone(), (value.trim().to_string(), i + 1)).is_some() {
                return Err(usage(format!("{}:{}: duplicate key `{key}`", path.display(), i + 1)));
            }
        }
        Ok(Settings {
            source: Some(path.to_path_buf()),
            entries,
        })
    }

    fn location(&self, line: usize) -> String {
        match &self.source {
            Some(p) => format!("{}:{line}", p.display()),
            None => format!("line {line}"),
        }
    }

    /// The flag if given, else the file entry. The entry is consumed either
    /// way.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        let entry = self.entries.remove(key);
        if flag.is_some() {
            return Ok(flag);
        }
        match entry {
            None => Ok(None),
            Some((value, line)) => value
                .parse()
                .map(Some)
                .map_err(|e| usage(format!("{}: bad value for `{key}`: {e}", self.location(line)))),
        }
    }

    pub fn get_or<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        Ok(self.get(key, flag)?.unwrap_or(default))
    }

    pub fn require<T>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        self.get(key, flag)?
            .ok_or_else(|| usage(format!("missing required input --{key}")))
    }

    /// Repeatable path flag; the file form is a comma-separated list.
    pub fn paths(&mut self, key: &str, flags: Vec<PathBuf>) -> Vec<PathBuf> {
        let entry = self.entries.remove(key);
        if !flags.is_empty() {
            return flags;
        }
        entry
            .map(|(v, _)| v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect())
            .unwrap_or_default()
    }

    /// Fails on the first key no command option asked for.
    pub fn finish(self) -> Result<()> {
        match self.entries.iter().next() {
            Some((key, (_, line))) => Err(usage(format!("{}: unknown config key `{key}`", self.location(*line)))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(text: &str) -> Settings {
        Settings::parse(Path::new("run.conf"), text).unwrap()
    }

    #[test]
    fn flags_override_file() {
        let mut s = settings("# comment\nlr = 0.1\nepochs = 3 # trailing\n");
        assert_eq!(s.get::<f64>("lr", Some(0.2)).unwrap(), Some(0.2));
        assert_eq!(s.get::<usize>("epochs", None).unwrap(), Some(3));
        s.finish().unwrap();
    }

    #[test]
    fn unknown_key_is_named() {
        let mut s = settings("lr = 0.1\nlearning-rat = 2\n");
        s.get::<f64>("lr", None).unwrap();
        let err = s.finish().unwrap_err();
        assert!(err.to_string().contains("learning-rat"));
        assert!(err.to_string().contains("run.conf:2"));
        assert!(err.downcast_ref::<UsageError>().is_some());
    }

    #[test]
    fn underscores_match_flag_names() {
        let mut s = settings("pca_dim = 20\n");
        assert_eq!(s.get::<usize>("pca-dim", None).unwrap(), Some(20));
    }

    #[test]
    fn malformed_lines_and_values() {
        assert!(Settings::parse(Path::new("c"), "just words\n").is_err());
        assert!(Settings::parse(Path::new("c"), "a = 1\na = 2\n").is_err());
        let mut s = settings("epochs = many\n");
        assert!(s.get::<usize>("epochs", None).is_err());
    }

    #[test]
    fn path_lists() {
        let mut s = settings("unlabeled = a.col, b\n");
        assert_eq!(s.paths("unlabeled", vec![]), vec![PathBuf::from("a.col"), PathBuf::from("b")]);
        let mut s = settings("unlabeled = a.col\n");
        assert_eq!(s.paths("unlabeled", vec![PathBuf::from("c")]), vec![PathBuf::from("c")]);
    }

    #[test]
    fn missing_required_input() {
        let mut s = Settings::default();
        let err = s.require::<PathBuf>("train", None).unwrap_err();
        assert_eq!(err.to_string(), "missing required input --train");
    }
}
