//! `key=value` settings from config files and inline `--config` pairs.
//! Command-line flags win over settings, settings over built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Default, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Each entry is either an inline `key=value` pair or the path of a file
    /// holding such lines (`#` starts a comment).
    pub fn load(entries: &[String]) -> Result<Self, CliError> {
        let mut s = Settings::default();
        for e in entries {
            if Path::new(e).is_file() {
                let text = std::fs::read_to_string(e).map_err(|err| CliError::io(format!("config `{e}`: {err}")))?;
                for (i, line) in text.lines().enumerate() {
                    let line = line.split('#').next().unwrap_or("").trim();
                    if line.is_empty() {
                        continue;
                    }
                    s.insert(line).map_err(|m| CliError::usage(format!("{e}:{}: {m}", i + 1)))?;
                }
            } else {
                s.insert(e).map_err(CliError::usage)?;
            }
        }
        Ok(s)
    }

    fn insert(&mut self, pair: &str) -> Result<(), String> {
        let (k, v) = pair.split_once('=').ok_or_else(|| format!("expected key=value, got `{pair}`"))?;
        let k = k.trim().replace('_', "-");
        if k.is_empty() {
            return Err(format!("empty key in `{pair}`"));
        }
        self.values.insert(k, v.trim().to_string());
        Ok(())
    }

    /// `flag` if given, else the setting `key`, else `default`.
    pub fn pick<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(raw) => raw.parse().map_err(|_| CliError::usage(format!("config value for `{key}` is invalid: `{raw}`"))),
            None => Ok(default),
        }
    }

    #[cfg(test)]
    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_settings_beat_defaults() {
        let s = Settings::load(&["waves=300".into(), "grid_h = 0.1".into()]).unwrap();
        assert_eq!(s.pick("waves", None, 600usize).unwrap(), 300);
        assert_eq!(s.pick("waves", Some(50usize), 600).unwrap(), 50);
        assert_eq!(s.pick("grid-h", None, 0.05f64).unwrap(), 0.1);
        assert_eq!(s.pick("seed", None, 7u64).unwrap(), 7);
        assert!(s.pick::<usize>("grid-h", None, 1).is_err());
    }

    #[test]
    fn config_files_allow_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.conf");
        std::fs::write(&p, "# sizes\nsamples=20\n\nradius = 15 # small\n").unwrap();
        let s = Settings::load(&[p.to_string_lossy().into_owned()]).unwrap();
        assert_eq!(s.get("samples"), Some("20"));
        assert_eq!(s.pick("radius", None, 50.0).unwrap(), 15.0);
        assert!(Settings::load(&["nonsense".into()]).is_err());
    }
}
