//! Layered `key = value` settings: preset defaults, then a config file, then
//! command-line flags.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use anyhow::{Context, Result};
use codlab_core::model::config::CONFIG_KEYS;
use codlab_core::model::ModelConfig;
use codlab_core::trainer::{TrainConfig, TRAIN_KEYS};

pub const PRESETS: [&str; 3] = ["toy", "dgnet_s", "dgnet"];
const EXTRA_KEYS: [&str; 2] = ["preset", "normalize"];

/// Bad invocation or configuration; the process exits with status 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn is_known(key: &str) -> bool {
    CONFIG_KEYS.contains(&key) || TRAIN_KEYS.contains(&key) || EXTRA_KEYS.contains(&key)
}

/// Parses a config file body. `#` starts a comment; blank lines are skipped.
pub fn parse_config(text: &str, origin: &str) -> Result<Vec<(String, String)>, Usage> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = format!("{origin}:{}", n + 1);
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Usage(format!("{at}: expected `key = value`, got `{line}`")))?;
        let (k, v) = (k.trim(), v.trim());
        if !is_known(k) {
            return Err(Usage(format!("{at}: unknown key `{k}`")));
        }
        if v.is_empty() {
            return Err(Usage(format!("{at}: `{k}` has no value")));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(Usage(format!("{at}: `{k}` is set twice")));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Splits a `--set KEY=VALUE` argument.
pub fn parse_assignment(s: &str) -> Result<(String, String), Usage> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Usage(format!("--set expects KEY=VALUE, got `{s}`")))?;
    let (k, v) = (k.trim(), v.trim());
    if !is_known(k) {
        return Err(Usage(format!("unknown key `{k}` in --set")));
    }
    Ok((k.to_string(), v.to_string()))
}

#[derive(Clone, Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// File entries first, then flag entries; later entries win.
    pub fn resolve(file: Option<&Path>, flags: Vec<(String, String)>) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            values.extend(parse_config(&text, &path.display().to_string())?);
        }
        for (k, v) in flags {
            if !is_known(&k) {
                return Err(Usage(format!("unknown key `{k}`")).into());
            }
            values.insert(k, v);
        }
        Ok(Self { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Keys set explicitly by the file or flags.
    pub fn explicit(&self) -> BTreeSet<&str> {
        self.values.keys().map(String::as_str).collect()
    }

    pub fn preset(&self) -> Result<&str, Usage> {
        let p = self.get("preset").unwrap_or("toy");
        if PRESETS.contains(&p) {
            Ok(p)
        } else {
            Err(Usage(format!("preset must be one of {}, got `{p}`", PRESETS.join("|"))))
        }
    }

    /// Preset schedule and model with every explicit key applied.
    pub fn train_config(&self, out_dir: &Path) -> Result<TrainConfig> {
        let base = match self.preset()? {
            "toy" => TrainConfig::toy(out_dir),
            "dgnet" => TrainConfig::full(ModelConfig::dgnet(), out_dir),
            _ => TrainConfig::full(ModelConfig::dgnet_s(), out_dir),
        };
        let cfg = base.overlay(&self.values).map_err(config_usage)?;
        cfg.validate().map_err(config_usage)?;
        Ok(cfg)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        Ok(self.train_config(Path::new("."))?.model)
    }

    pub fn normalize(&self) -> Result<bool, Usage> {
        match self.get("normalize").unwrap_or("off") {
            "on" | "true" | "1" => Ok(true),
            "off" | "false" | "0" => Ok(false),
            v => Err(Usage(format!("normalize must be on|off, got `{v}`"))),
        }
    }
}

fn config_usage(e: codlab_core::Error) -> anyhow::Error {
    Usage(e.to_string()).into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_whitespace() {
        let kv = parse_config("# header\n\n  epochs=3  # trailing\nlr_max = 0.01\n", "t").unwrap();
        assert_eq!(kv, vec![("epochs".into(), "3".into()), ("lr_max".into(), "0.01".into())]);
    }

    #[test]
    fn rejections_name_the_problem() {
        let e = parse_config("epochs = 3\nwidth = 9\n", "f.cfg").unwrap_err();
        assert_eq!(e.0, "f.cfg:2: unknown key `width`");
        assert!(parse_config("epochs 3", "f").unwrap_err().0.contains("key = value"));
        assert!(parse_config("epochs =", "f").unwrap_err().0.contains("no value"));
        assert!(parse_config("seed = 1\nseed = 2", "f").unwrap_err().0.contains("twice"));
        assert!(parse_assignment("nope=1").unwrap_err().0.contains("`nope`"));
    }

    #[test]
    fn flags_override_file_and_file_overrides_preset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        std::fs::write(&path, "preset = dgnet_s\nepochs = 7\nbatch_size = 2\n").unwrap();
        let s = Settings::resolve(Some(&path), vec![("epochs".into(), "9".into())]).unwrap();
        let cfg = s.train_config(dir.path()).unwrap();
        assert_eq!((cfg.epochs, cfg.batch_size), (9, 2));
        assert_eq!(cfg.model, ModelConfig::dgnet_s());
        assert_eq!(cfg.lr_max, TrainConfig::full(ModelConfig::dgnet_s(), "x").lr_max);
        let toy = Settings::resolve(None, vec![]).unwrap().train_config(dir.path()).unwrap();
        assert_eq!(toy, TrainConfig::toy(dir.path()));
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let s = Settings::resolve(None, vec![("lr_min".into(), "1".into())]).unwrap();
        assert!(s.train_config(Path::new(".")).unwrap_err().downcast_ref::<Usage>().is_some());
        let s = Settings::resolve(None, vec![("preset".into(), "huge".into())]).unwrap();
        assert!(s.model_config().is_err());
    }
}
