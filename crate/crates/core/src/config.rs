//! Deployment configuration: one JSON file, located by `HOMEWATCH_CONFIG`
//! or a command-line flag.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::centre::CentreSettings;
use crate::model::{QuestionnaireDefinition, Timestamp};
use crate::schedule::ScheduleConfig;
use crate::triage::RuleSet;

pub const CONFIG_ENV: &str = "HOMEWATCH_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayKind {
    File,
    Stdout,
    Null,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub kind: GatewayKind,
    #[serde(default)]
    pub path: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig { kind: GatewayKind::File, path: Some(PathBuf::from("data/outbox.jsonl")) }
    }
}

/// `"system"` reads the wall clock; `{"manual": {"start": ...}}` only moves
/// when told to, which is what simulations drive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockConfig {
    System,
    Manual { start: Timestamp },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeploymentConfig {
    pub bind: String,
    pub base_url: String,
    pub event_log: PathBuf,
    /// fsync after every append.
    pub sync_writes: bool,
    pub snapshot_every: u64,
    /// Questionnaire definition file; the built-in six-item set when absent.
    pub questionnaire: Option<PathBuf>,
    /// Ruleset file; built-in default-v1 when absent.
    pub ruleset: Option<PathBuf>,
    pub gateway: GatewayConfig,
    pub scheduling: ScheduleConfig,
    /// Value expected in the `X-Operator-Token` header of operator endpoints.
    pub operator_token: String,
    pub clock: ClockConfig,
    /// Seconds between scheduler ticks under the system clock.
    pub tick_interval_secs: u64,
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        DeploymentConfig {
            bind: "127.0.0.1:8080".into(),
            base_url: "http://127.0.0.1:8080".into(),
            event_log: PathBuf::from("data/events.log"),
            sync_writes: true,
            snapshot_every: 10_000,
            questionnaire: None,
            ruleset: None,
            gateway: GatewayConfig::default(),
            scheduling: ScheduleConfig::default(),
            operator_token: String::new(),
            clock: ClockConfig::System,
            tick_interval_secs: 60,
        }
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })
}

impl DeploymentConfig {
    /// Loads and validates; relative paths inside resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = read(path)?;
        let mut cfg: DeploymentConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse { path: path.to_owned(), message: e.to_string() })?;
        if let Some(dir) = path.parent() {
            cfg.rebase(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.event_log);
        self.questionnaire.as_mut().map(fix);
        self.ruleset.as_mut().map(fix);
        self.gateway.path.as_mut().map(fix);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.operator_token.trim().len() < 8 {
            return Err(ConfigError::Invalid("operator_token must be at least 8 characters".into()));
        }
        if self.gateway.kind == GatewayKind::File && self.gateway.path.is_none() {
            return Err(ConfigError::Invalid("file gateway needs a path".into()));
        }
        if self.tick_interval_secs == 0 {
            return Err(ConfigError::Invalid("tick_interval_secs must be positive".into()));
        }
        self.scheduling.validate().map_err(ConfigError::Invalid)
    }

    pub fn questionnaire(&self) -> Result<QuestionnaireDefinition, ConfigError> {
        match &self.questionnaire {
            None => Ok(QuestionnaireDefinition::default_set()),
            Some(p) => QuestionnaireDefinition::from_json(&read(p)?)
                .map_err(|e| ConfigError::Parse { path: p.clone(), message: e.to_string() }),
        }
    }

    pub fn ruleset(&self, def: &QuestionnaireDefinition) -> Result<RuleSet, ConfigError> {
        match &self.ruleset {
            None => RuleSet::from_source(
                crate::triage::RuleSetSource::from_json(crate::triage::DEFAULT_V1).expect("shipped ruleset parses"),
                def,
            )
            .map_err(|e| ConfigError::Invalid(e.to_string())),
            Some(p) => RuleSet::load(&read(p)?, def).map_err(|e| ConfigError::Parse { path: p.clone(), message: e.to_string() }),
        }
    }

    pub fn centre_settings(&self) -> CentreSettings {
        CentreSettings {
            base_url: self.base_url.clone(),
            scheduling: self.scheduling.clone(),
            snapshot_every: self.snapshot_every,
        }
    }
}
