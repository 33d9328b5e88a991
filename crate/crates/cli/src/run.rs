//! Effective configuration, run directories and manifests.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nowcast_core::io::Config;
use sha2::{Digest, Sha256};

/// Keys every command accepts.
const COMMON: [&str; 3] = ["seed", "out", "data"];

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Settings of one invocation: defaults, then the config file, then flags.
pub struct Run {
    pub command: &'static str,
    pub config: Config,
    pub dir: PathBuf,
}

impl Run {
    pub fn new(command: &'static str, defaults: Config, file: Option<&Path>, flags: Config) -> Result<Self> {
        let mut config = defaults.clone();
        config.set("seed", 1);
        config.set("out", format!("runs/{command}"));
        if let Some(path) = file {
            let from_file = Config::load(path)?;
            for k in from_file.keys() {
                if !COMMON.contains(&k) && defaults.raw(k).is_none() && k != "command" {
                    log::warn!("config key '{k}' is not used by {command}");
                }
            }
            config.merge(&from_file);
        }
        config.merge(&flags);
        if let Some(c) = config.raw("command") {
            if c != command {
                bail!("configuration was written for '{c}', not '{command}'");
            }
        }
        config.set("command", command);
        let dir = PathBuf::from(config.raw("out").unwrap_or("runs"));
        fs::create_dir_all(&dir).with_context(|| format!("cannot create run directory {}", dir.display()))?;
        Ok(Self { command, config, dir })
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        match self.config.get::<T>(key)? {
            Some(v) => Ok(v),
            None => bail!("missing setting '{key}'"),
        }
    }

    pub fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        Ok(self.config.get_list::<T>(key)?.unwrap_or_default())
    }

    pub fn str(&self, key: &str) -> Result<String> {
        self.get::<String>(key)
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn data_dir(&self) -> Result<PathBuf> {
        match self.config.raw("data") {
            Some(d) if !d.is_empty() => Ok(PathBuf::from(d)),
            _ => bail!("{} needs input data: pass --data DIR or set data = DIR", self.command),
        }
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    /// Writes `config.txt` (the effective settings) and `manifest.txt`.
    pub fn finish(&self, outputs: &[&str]) -> Result<()> {
        let text = self.config.to_text();
        fs::write(self.path("config.txt"), &text)?;
        let mut m = Config::default();
        m.set("command", self.command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m.set("seed", self.config.raw("seed").unwrap_or(""));
        m.set("config_sha256", sha256_hex(text.as_bytes()));
        m.set("outputs", outputs.join(", "));
        m.set("reproduce", format!("nowcast {} --config {}", self.command, self.path("config.txt").display()));
        if let Some(d) = self.config.raw("data").filter(|d| !d.is_empty()) {
            for f in ["lfs.csv", "cc.csv", "gt_monthly.csv", "gt_weekly.csv", "calendar.csv"] {
                let p = Path::new(d).join(f);
                if let Ok(bytes) = fs::read(&p) {
                    m.set(&format!("input_sha256.{f}"), sha256_hex(&bytes));
                }
            }
        }
        fs::write(self.path("manifest.txt"), m.to_text())?;
        for o in outputs {
            log::info!("wrote {}", self.path(o).display());
        }
        Ok(())
    }
}

/// Builds a config from `key = value` pairs, skipping unset flags.
pub fn flags<const N: usize>(pairs: [(&str, Option<String>); N]) -> Config {
    let mut c = Config::default();
    for (k, v) in pairs {
        if let Some(v) = v {
            c.set(k, v);
        }
    }
    c
}

pub fn defaults(pairs: &[(&str, &str)]) -> Config {
    let mut c = Config::default();
    for (k, v) in pairs {
        c.set(k, v);
    }
    c
}
