//! Run configuration files: UTF-8 `key = value` lines under `[section]`
//! headers. Sections are `[model]`, `[train]` and `[data]`; unknown keys
//! are rejected rather than ignored. Relative paths resolve against the
//! config file's directory.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use crate::mcn::{FusionSpec, McnConfig};
use crate::train::TrainConfig;

/// Everything a config file can describe.
#[derive(Debug, Clone, PartialEq)]
pub struct FileConfig {
    pub model: McnConfig,
    pub train: TrainConfig,
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for FileConfig {
    fn default() -> Self {
        FileConfig {
            model: McnConfig::rmcn(3),
            train: TrainConfig::default(),
            manifest: None,
            out_dir: None,
        }
    }
}

pub fn load_config(path: &Path) -> Result<FileConfig> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let origin = path.display().to_string();
    let contents = std::fs::read_to_string(path).map_err(|e| Error::io(origin.clone(), e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&contents, &origin, base)
}

pub fn parse_config(contents: &str, origin: &str, base: &Path) -> Result<FileConfig> {
    let mut cfg = FileConfig::default();
    let mut section = String::new();
    for (lineno, raw_line) in contents.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::format(origin, format!("line {}: {msg}", lineno + 1));
        if let Some(name) = line.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']') else {
                return Err(err(format!("unterminated section header '{line}'")));
            };
            match name {
                "model" | "train" | "data" => section = name.to_string(),
                other => return Err(err(format!("unknown section '[{other}]'"))),
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(err(format!("expected 'key = value', got '{line}'")));
        };
        let key = key.trim();
        let value = value.trim();
        let parse_usize = || -> Result<usize> {
            value
                .parse()
                .map_err(|_| err(format!("'{key}' needs an unsigned integer, got '{value}'")))
        };
        let parse_f64 = || -> Result<f64> {
            value
                .parse()
                .map_err(|_| err(format!("'{key}' needs a number, got '{value}'")))
        };
        let parse_bool = || -> Result<bool> {
            match value {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(err(format!("'{key}' needs true/false, got '{value}'"))),
            }
        };
        match (section.as_str(), key) {
            ("model", "fusion") => {
                cfg.model.fusion = match value {
                    "residual" => FusionSpec::residual(),
                    "dense" => FusionSpec::dense(),
                    other => return Err(err(format!("unknown fusion '{other}'"))),
                }
            }
            ("model", "sgns") => cfg.model.sgn_count = parse_usize()?,
            ("model", "in_channels") => cfg.model.in_channels = parse_usize()?,
            ("model", "factor") => cfg.model.upsample_factor = parse_usize()?,
            ("model", "width_divisor") => cfg.model.width_divisor = parse_usize()?,
            ("model", "back_connection") => cfg.model.back_connection = parse_bool()?,
            ("model", "alpha_out") => cfg.model.fusion.alpha_out = parse_f64()?,
            ("model", "beta_coop") => cfg.model.fusion.beta_coop = parse_f64()?,
            ("model", "beta_back") => cfg.model.fusion.beta_back = parse_f64()?,
            ("train", "epochs") => cfg.train.epochs = parse_usize()?,
            ("train", "lr_initial") => cfg.train.lr_initial = parse_f64()?,
            ("train", "lr_late") => cfg.train.lr_late = parse_f64()?,
            ("train", "lr_switch_epoch") => cfg.train.lr_switch_epoch = parse_usize()?,
            ("train", "crop") => cfg.train.crop = parse_usize()?,
            ("train", "seed") => {
                cfg.train.seed = value
                    .parse()
                    .map_err(|_| err(format!("'seed' needs a u64, got '{value}'")))?
            }
            ("train", "batch") => cfg.train.batch = parse_usize()?,
            ("train", "lambda_r") => cfg.train.weights.lambda_r = parse_f64()?,
            ("train", "lambda_s") => cfg.train.weights.lambda_s = parse_f64()?,
            ("train", "checkpoint_interval") => cfg.train.checkpoint_interval = parse_usize()?,
            ("train", "max_steps") => cfg.train.max_steps = Some(parse_usize()?),
            ("data", "manifest") => cfg.manifest = Some(base.join(value)),
            ("data", "out_dir") => cfg.out_dir = Some(base.join(value)),
            ("", k) => return Err(err(format!("key '{k}' appears before any section"))),
            (s, k) => return Err(err(format!("unknown key '{k}' in section '[{s}]'"))),
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcn::FusionKind;

    #[test]
    fn parses_a_full_config() {
        let text = "\
# desk-scale run
[model]
fusion = dense
sgns = 2
width_divisor = 8
back_connection = true

[train]
epochs = 12
crop = 64
seed = 42
lambda_s = 0.5
max_steps = 100

[data]
manifest = set/manifest.txt
out_dir = runs/a
";
        let cfg = parse_config(text, "test", Path::new("/cfgdir")).unwrap();
        assert_eq!(cfg.model.fusion.kind, FusionKind::Dense);
        assert_eq!(cfg.model.fusion.beta_back, 0.0);
        assert_eq!(cfg.model.sgn_count, 2);
        assert_eq!(cfg.model.width_divisor, 8);
        assert_eq!(cfg.train.epochs, 12);
        assert_eq!(cfg.train.crop, 64);
        assert_eq!(cfg.train.seed, 42);
        assert_eq!(cfg.train.weights.lambda_s, 0.5);
        assert_eq!(cfg.train.weights.lambda_r, 1.0);
        assert_eq!(cfg.train.max_steps, Some(100));
        assert_eq!(cfg.manifest.unwrap(), Path::new("/cfgdir/set/manifest.txt"));
        assert_eq!(cfg.out_dir.unwrap(), Path::new("/cfgdir/runs/a"));
    }

    #[test]
    fn defaults_match_the_training_protocol() {
        let cfg = parse_config("", "test", Path::new(".")).unwrap();
        assert_eq!(cfg.train.epochs, 4000);
        assert_eq!(cfg.train.lr_initial, 1e-4);
        assert_eq!(cfg.train.lr_late, 1e-5);
        assert_eq!(cfg.train.lr_switch_epoch, 2000);
        assert_eq!(cfg.train.crop, 512);
        assert_eq!(cfg.train.batch, 1);
    }

    #[test]
    fn rejects_unknown_keys_and_malformed_lines() {
        assert!(parse_config("[model]\nwat = 1\n", "t", Path::new(".")).is_err());
        assert!(parse_config("[nope]\n", "t", Path::new(".")).is_err());
        assert!(parse_config("[model]\nsgns\n", "t", Path::new(".")).is_err());
        assert!(parse_config("sgns = 2\n", "t", Path::new(".")).is_err());
        assert!(parse_config("[train]\nepochs = many\n", "t", Path::new(".")).is_err());
    }
}
