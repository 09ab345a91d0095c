//! Scoring configuration files: a partial TOML or JSON document overlaid onto
//! the defaults of a mode. Unknown keys are rejected with their path.

use std::path::Path;

use serde_json::Value;
use thiserror::Error;

use crate::metrics::ScoringConfig;
use crate::scene::Mode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: at `{field}`: {message}")]
    Field { path: String, field: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

impl ConfigFormat {
    /// From the file extension; anything other than `.toml` is read as JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("toml") => Self::Toml,
            _ => Self::Json,
        }
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn validate_scoring(cfg: &ScoringConfig) -> Result<(), String> {
    cfg.sim.validate().map_err(|e| e.to_string())?;
    let m = &cfg.metrics;
    if !(m.ttc_step > 0.0 && m.ttc_threshold >= 0.0 && m.stationary_speed >= 0.0 && m.min_progress_bound >= 0.0) {
        return Err("metric parameters must be non-negative and ttc_step positive".into());
    }
    let c = &cfg.comfort;
    if [c.lat_acc, c.lon_acc, c.lon_dec, c.abs_jerk, c.lon_jerk, c.yaw_rate, c.yaw_acc].iter().any(|v| !(*v > 0.0)) {
        return Err("comfort thresholds must be positive".into());
    }
    Ok(())
}

/// Overlays `text` onto the defaults for `mode`. `label` names the source in
/// error messages. The overlay may not switch the simulator mode.
pub fn overlay_scoring_config(mode: Mode, text: &str, format: ConfigFormat, label: &str) -> Result<ScoringConfig, ConfigError> {
    let parse = |message: String| ConfigError::Parse { path: label.to_string(), message };
    let overlay: Value = match format {
        ConfigFormat::Json => serde_json::from_str(text).map_err(|e| parse(e.to_string()))?,
        ConfigFormat::Toml => {
            let t: toml::Table = toml::from_str(text).map_err(|e| parse(e.to_string()))?;
            serde_json::to_value(t).map_err(|e| parse(e.to_string()))?
        }
    };
    if !overlay.is_object() {
        return Err(parse("config must be a table/object".into()));
    }
    let mut merged = serde_json::to_value(ScoringConfig::for_mode(mode)).expect("defaults serialize");
    merge(&mut merged, overlay);
    let cfg: ScoringConfig = serde_path_to_error::deserialize(merged).map_err(|e| ConfigError::Field {
        path: label.to_string(),
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    let invalid = |message: String| ConfigError::Invalid { path: label.to_string(), message };
    if cfg.mode() != mode {
        return Err(invalid(format!("config sets mode {} but {} was requested", cfg.mode(), mode)));
    }
    validate_scoring(&cfg).map_err(invalid)?;
    Ok(cfg)
}

pub fn load_scoring_config(mode: Mode, path: &Path) -> Result<ScoringConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    overlay_scoring_config(mode, &text, ConfigFormat::from_path(path), &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_overlay_is_defaults() {
        let cfg = overlay_scoring_config(Mode::Bench2drive, "", ConfigFormat::Toml, "x").unwrap();
        assert_eq!(cfg, ScoringConfig::for_mode(Mode::Bench2drive));
    }

    #[test]
    fn partial_overlay() {
        let cfg = overlay_scoring_config(Mode::Navsim, "[comfort]\nlat_acc = 3.0\n", ConfigFormat::Toml, "x").unwrap();
        assert_eq!(cfg.comfort.lat_acc, 3.0);
        assert_eq!(cfg.comfort.lon_acc, 2.40);
        let cfg = overlay_scoring_config(Mode::Navsim, r#"{"sim": {"k_speed": 1.5}}"#, ConfigFormat::Json, "x").unwrap();
        assert_eq!(cfg.sim.k_speed, 1.5);
        assert_eq!(cfg.sim.sim_hz, 10.0);
    }

    #[test]
    fn unknown_key_names_its_path() {
        let err = overlay_scoring_config(Mode::Navsim, "[comfort]\nlat_accel = 3.0\n", ConfigFormat::Toml, "cfg.toml").unwrap_err();
        match err {
            ConfigError::Field { field, .. } => assert!(field.starts_with("comfort"), "{field}"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn mode_switch_and_bad_values_rejected() {
        let e = overlay_scoring_config(Mode::Navsim, r#"{"sim": {"mode": "bench2drive"}}"#, ConfigFormat::Json, "x");
        assert!(matches!(e, Err(ConfigError::Invalid { .. })));
        let e = overlay_scoring_config(Mode::Navsim, r#"{"metrics": {"ttc_step": 0}}"#, ConfigFormat::Json, "x");
        assert!(matches!(e, Err(ConfigError::Invalid { .. })));
        let e = overlay_scoring_config(Mode::Navsim, "[1, 2]", ConfigFormat::Json, "x");
        assert!(matches!(e, Err(ConfigError::Parse { .. })));
    }
}
