//! Run configuration from defaults, an optional JSON file, and flags.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use srdistill::{RunConfig, ScaleFactor};

/// Keys mirror the long flag names; `patch_size` style is accepted too.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigFile {
    pub scale: Option<u32>,
    #[serde(alias = "patch_size")]
    pub patch_size: Option<usize>,
    #[serde(alias = "bottom_frac")]
    pub bottom_frac: Option<f64>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub inject: Option<bool>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("{}: cannot read config", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("{}: invalid config", path.display()))
    }
}

/// Values given on the command line; `None` falls through to the file, then defaults.
#[derive(Debug, Default, Clone, Copy)]
pub struct Overrides {
    pub scale: Option<u32>,
    pub patch_size: Option<usize>,
    pub bottom_frac: Option<f64>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

pub fn resolve(file: Option<&Path>, flags: Overrides) -> Result<(RunConfig, ConfigFile)> {
    let file = match file {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let d = RunConfig::default();
    let scale = flags.scale.or(file.scale).unwrap_or(d.scale.get());
    let cfg = RunConfig {
        scale: ScaleFactor::new(scale)?,
        patch_size: flags.patch_size.or(file.patch_size).unwrap_or(d.patch_size),
        bottom_frac: flags.bottom_frac.or(file.bottom_frac).unwrap_or(d.bottom_frac),
        seed: flags.seed.or(file.seed).unwrap_or(d.seed),
        workers: flags.workers.or(file.workers).unwrap_or(d.workers),
    };
    if cfg.patch_size < 2 {
        bail!("patch size must be at least 2, got {}", cfg.patch_size);
    }
    if !(cfg.bottom_frac > 0.0 && cfg.bottom_frac <= 1.0) {
        bail!("bottom fraction must be in (0, 1], got {}", cfg.bottom_frac);
    }
    Ok((cfg, file))
}
