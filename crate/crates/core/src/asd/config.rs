use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::scorekit::{Epsilon, Fixed, ReputationConfig, ScoreError, ScoreParams};

pub const REGISTRATION_TOKEN_ENV: &str = "SANDI_REGISTRATION_TOKEN";
pub const ADMIN_TOKEN_ENV: &str = "SANDI_ADMIN_TOKEN";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("{0} is not set (config key or environment)")]
    MissingSecret(&'static str),
}

/// On-disk server configuration (TOML).
///
/// ```toml
/// listen_addr = "127.0.0.1:8080"
/// data_dir = "/var/lib/sandi"
/// epoch_duration_secs = 86400   # 0 disables the timer
/// k = 2
/// b = 0.5
/// M = 100
/// epsilon = "off"               # or a positive number
/// labels = ["low", "medium", "high", "very high"]
/// thresholds = [0, 25, 75]
/// registration_token = "..."    # or SANDI_REGISTRATION_TOKEN
/// admin_token = "..."           # or SANDI_ADMIN_TOKEN
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_listen")]
    pub listen_addr: String,
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default = "default_epoch")]
    pub epoch_duration_secs: u64,
    pub k: u32,
    pub b: Fixed,
    #[serde(rename = "M")]
    pub ceiling: Fixed,
    #[serde(default)]
    pub epsilon: Epsilon,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    #[serde(default)]
    pub thresholds: Option<Vec<Fixed>>,
    #[serde(default)]
    pub registration_token: Option<String>,
    #[serde(default)]
    pub admin_token: Option<String>,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: u64,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_epoch() -> u64 {
    86_400
}

fn default_snapshot_every() -> u64 {
    10_000
}

/// Validated settings the service runs with.
#[derive(Debug, Clone)]
pub struct ServerSettings {
    pub params: ScoreParams,
    pub reputation: ReputationConfig,
    pub registration_token: String,
    pub admin_token: String,
    pub epoch_duration_secs: u64,
    pub snapshot_every: u64,
}

impl ServerSettings {
    pub fn new(params: ScoreParams, registration_token: impl Into<String>, admin_token: impl Into<String>) -> Self {
        ServerSettings {
            reputation: ReputationConfig::default_for(params.ceiling()),
            params,
            registration_token: registration_token.into(),
            admin_token: admin_token.into(),
            epoch_duration_secs: 0,
            snapshot_every: default_snapshot_every(),
        }
    }
}

impl ServerConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Ok(toml::from_str(&text)?)
    }

    /// Resolves secrets (environment wins over the file) and validates parameters.
    pub fn settings(&self) -> Result<ServerSettings, ConfigError> {
        let params = ScoreParams::new(self.k, self.b, self.ceiling, self.epsilon)?;
        let reputation = match (&self.labels, &self.thresholds) {
            (None, None) => ReputationConfig::default_for(params.ceiling()),
            (labels, thresholds) => {
                let fallback = ReputationConfig::default_for(params.ceiling());
                ReputationConfig::new(
                    labels.clone().unwrap_or_else(|| fallback.labels().to_vec()),
                    thresholds.clone().unwrap_or_else(|| fallback.thresholds().to_vec()),
                )?
            }
        };
        let secret = |env: &str, value: &Option<String>, name: &'static str| {
            std::env::var(env)
                .ok()
                .filter(|v| !v.is_empty())
                .or_else(|| value.clone())
                .ok_or(ConfigError::MissingSecret(name))
        };
        Ok(ServerSettings {
            params,
            reputation,
            registration_token: secret(REGISTRATION_TOKEN_ENV, &self.registration_token, "registration_token")?,
            admin_token: secret(ADMIN_TOKEN_ENV, &self.admin_token, "admin_token")?,
            epoch_duration_secs: self.epoch_duration_secs,
            snapshot_every: self.snapshot_every.max(1),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_keys() {
        let cfg: ServerConfig = toml::from_str(
            r#"
            listen_addr = "127.0.0.1:0"
            epoch_duration_secs = 0
            k = 1
            b = 0.5
            M = 10
            epsilon = 0.6931
            thresholds = [0, 2.5, 7.5]
            registration_token = "reg"
            admin_token = "adm"
            "#,
        )
        .unwrap();
        let s = cfg.settings().unwrap();
        assert_eq!(s.params.k(), 1);
        assert_eq!(s.params.b().raw(), 50);
        assert_eq!(s.params.epsilon().value(), Some(0.6931));
        assert_eq!(s.reputation.thresholds()[1].raw(), 250);
        assert_eq!(s.reputation.label(3), Some("very high"));
    }

    #[test]
    fn rejects_bad_params_and_unknown_keys() {
        let bad: ServerConfig = toml::from_str("k = 0\nb = 1\nM = 10\nregistration_token='a'\nadmin_token='b'").unwrap();
        assert!(matches!(bad.settings(), Err(ConfigError::Score(_))));
        assert!(toml::from_str::<ServerConfig>("k = 1\nb = 1\nM = 10\nbogus = 1").is_err());
    }
}
