//! JSON run configuration and `key=value` overrides.

use std::path::Path;

use ortho_hydra_core::harness::TrainConfig;
use serde_json::Value;

use crate::error::{CliError, Result};

/// Reads a config file. A run manifest is accepted too; its resolved
/// config is used.
pub fn load(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::ConfigParse(format!("cannot read {}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::ConfigParse(format!("{}: {e}", path.display())))?;
    if value.get("tool").is_some() {
        if let Some(cfg) = value.get_mut("config") {
            value = cfg.take();
        }
    }
    from_value(value)
}

fn from_value(value: Value) -> Result<TrainConfig> {
    let cfg: TrainConfig = serde_json::from_value(value).map_err(|e| CliError::ConfigParse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Applies `a.b.c=value` overrides. Values parse as JSON when they can and
/// fall back to strings, so `variant=naive` and `balance.weight=0.1` both work.
pub fn apply_overrides(cfg: &TrainConfig, overrides: &[String]) -> Result<TrainConfig> {
    let mut root = serde_json::to_value(cfg).map_err(|e| CliError::ConfigParse(e.to_string()))?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| CliError::ConfigParse(format!("override `{item}` is not key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| CliError::ConfigParse(format!("unknown config key `{key}`")))?;
        }
        *slot = value;
    }
    from_value(root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ortho_hydra_core::harness::VariantKind;

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = TrainConfig::toy(VariantKind::Ortho);
        let out = apply_overrides(
            &cfg,
            &["variant=naive".into(), "balance.weight=0.5".into(), "task.seq_len=16".into()],
        )
        .unwrap();
        assert_eq!(out.variant, VariantKind::Naive);
        assert_eq!(out.balance.weight, 0.5);
        assert_eq!(out.task.seq_len, 16);
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        let cfg = TrainConfig::toy(VariantKind::Ortho);
        for bad in ["nokey", "missing=1", "balance.nope=1", "variant=sideways", "experts=0"] {
            let err = apply_overrides(&cfg, &[bad.into()]).unwrap_err();
            assert!(matches!(err, CliError::ConfigParse(_)), "{bad}: {err}");
        }
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = from_value(serde_json::json!({"variant": "jittered", "total_steps": 5})).unwrap();
        assert_eq!(cfg.variant, VariantKind::Jittered);
        assert_eq!(cfg.total_steps, 5);
        assert_eq!(cfg.experts, TrainConfig::toy(VariantKind::Jittered).experts);
        assert!(from_value(serde_json::json!({"epochs": 3})).is_err());
    }
}
