//! Flat `key = value` configuration files for training.
//!
//! One setting per line; `#` starts a comment; blank lines are ignored.
//! Unset keys keep their defaults.
//!
//! | key | type | default |
//! |-----|------|---------|
//! | `epochs` | integer | 200 |
//! | `lr` | float | 1e-3 |
//! | `batch` | integer | 8 |
//! | `seed` | integer | 0 |
//! | `clip_norm` | float or `none` | none |
//! | `ablation` | `full`, `no_v`, `no_f`, `objects_only`, `human_only`, `no_text` | full |
//! | `points` | integer | 256 |
//! | `steps` | integer | 100 |
//! | `schedule` | `linear` or `cosine` | cosine |
//! | `d_text`, `d_embed`, `d_hidden`, `d_v`, `d_f`, `d_time` | integer | 128, 32, 32, 32, 32, 32 |
//! | `heads` | integer | 4 |
//! | `attn_layers` | integer | 1 |
//! | `fourier` | integer | 32 |
//! | `fourier_scale` | float | 6 |

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::train::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    Value { line: usize, key: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

fn value<T>(line: usize, key: &str, raw: &str) -> Result<T, ConfigError>
where
    T: FromStr,
    T::Err: Display,
{
    raw.parse().map_err(|e: T::Err| ConfigError::Value {
        line,
        key: key.to_string(),
        reason: e.to_string(),
    })
}

pub fn parse_train_config(text: &str) -> Result<TrainConfig, ConfigError> {
    let mut cfg = TrainConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, val) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            reason: format!("expected `key = value`, got `{content}`"),
        })?;
        let (key, val) = (key.trim(), val.trim());
        let h = &mut cfg.hyper;
        match key {
            "epochs" => cfg.epochs = value(line, key, val)?,
            "lr" => cfg.lr = value(line, key, val)?,
            "batch" => cfg.batch = value(line, key, val)?,
            "seed" => cfg.seed = value(line, key, val)?,
            "clip_norm" => {
                cfg.clip_norm = if val.eq_ignore_ascii_case("none") {
                    None
                } else {
                    Some(value(line, key, val)?)
                }
            }
            "ablation" => cfg.ablation = value(line, key, val)?,
            "points" => h.points = value(line, key, val)?,
            "steps" => h.steps = value(line, key, val)?,
            "schedule" => h.schedule = value(line, key, val)?,
            "d_text" => h.d_text = value(line, key, val)?,
            "d_embed" => h.d_embed = value(line, key, val)?,
            "d_hidden" => h.d_hidden = value(line, key, val)?,
            "d_v" => h.d_v = value(line, key, val)?,
            "d_f" => h.d_f = value(line, key, val)?,
            "d_time" => h.d_time = value(line, key, val)?,
            "heads" => h.heads = value(line, key, val)?,
            "attn_layers" => h.attn_layers = value(line, key, val)?,
            "fourier" => h.fourier = value(line, key, val)?,
            "fourier_scale" => h.fourier_scale = value(line, key, val)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
    }
    cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg)
}

pub fn load_train_config(path: &Path) -> Result<TrainConfig, ConfigError> {
    parse_train_config(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpnet::Ablation;

    #[test]
    fn overrides_and_comments() {
        let cfg = parse_train_config("# run\nepochs = 5\nclip_norm = none  # off\nablation = no_v\n\nd_f=16\n").unwrap();
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.clip_norm, None);
        assert_eq!(cfg.ablation, Ablation::NoV);
        assert_eq!(cfg.hyper.d_f, 16);
        assert_eq!(cfg.batch, TrainConfig::default().batch);
    }

    #[test]
    fn errors_name_the_line() {
        let err = parse_train_config("epochs = 5\nlearning = 1").unwrap_err();
        assert!(err.to_string().starts_with("line 2"), "{err}");
        let err = parse_train_config("epochs = five").unwrap_err();
        assert!(matches!(err, ConfigError::Value { line: 1, .. }));
        assert!(parse_train_config("epochs").is_err());
        assert!(matches!(parse_train_config("epochs = 0"), Err(ConfigError::Invalid(_))));
    }
}
