//! Experiment configuration.
//!
//! Configs are TOML. Every key has a default, unknown keys are rejected, and any
//! key can be overridden from the command line with a dotted path such as
//! `train.lr=5e-4` or `ppo.clip_eps=0.1`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::EnvName;
use crate::error::{Error, Result};
use crate::ppo::Architecture;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ppo,
    Pqn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub num_minibatches: usize,
    pub lr: f64,
    /// Linearly anneal the learning rate to zero over the run.
    pub lr_anneal: bool,
    /// Adam epsilon; defaults to 1e-5 for PPO and 1e-8 for PQN.
    pub adam_eps: Option<f64>,
    pub max_grad_norm: f64,
    pub gamma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            num_minibatches: 4,
            lr: 2.5e-4,
            lr_anneal: true,
            adam_eps: None,
            max_grad_norm: 0.5,
            gamma: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub lambda: f64,
    pub clip_eps: f64,
    pub c1: f64,
    pub c2: f64,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            lambda: 0.95,
            clip_eps: 0.2,
            c1: 0.5,
            c2: 0.01,
            normalize_advantages: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PqnConfig {
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_steps: u64,
}

impl Default for PqnConfig {
    fn default() -> Self {
        Self {
            eps_start: 1.0,
            eps_end: 0.011,
            eps_decay_steps: 250_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub architecture: Architecture,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            architecture: Architecture::Shared,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    /// One metrics row every this many updates.
    pub metric_cadence: usize,
    pub coverage_grid: usize,
    pub rank_tau: f64,
    pub dormant_eps: f64,
    pub kurtosis_eps: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            metric_cadence: 1,
            coverage_grid: crate::diagnostics::DEFAULT_COVERAGE_GRID,
            rank_tau: crate::diagnostics::DEFAULT_RANK_TAU,
            dormant_eps: crate::diagnostics::DEFAULT_DORMANT_EPS,
            kurtosis_eps: crate::diagnostics::DEFAULT_KURTOSIS_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Final score = mean return of this many most recent episodes.
    pub score_window: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { score_window: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub env: EnvName,
    pub total_env_steps: u64,
    pub n_envs: usize,
    pub n_ro: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Seeds trained concurrently; 0 uses one worker per core.
    pub workers: usize,
    /// Label carried into run records; sweeps set it per point.
    pub config_id: String,
    pub train: TrainConfig,
    pub ppo: PpoConfig,
    pub pqn: PqnConfig,
    pub network: NetworkConfig,
    pub diagnostics: DiagnosticsConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Ppo,
            env: EnvName::ChainWalk,
            total_env_steps: 204_800,
            n_envs: 8,
            n_ro: 128,
            seeds: vec![0, 1, 2, 3, 4],
            output_dir: PathBuf::from("runs/default"),
            workers: 0,
            config_id: "default".into(),
            train: TrainConfig::default(),
            ppo: PpoConfig::default(),
            pqn: PqnConfig::default(),
            network: NetworkConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

impl ExperimentConfig {
    pub fn batch_size(&self) -> usize {
        self.n_envs * self.n_ro
    }

    pub fn num_updates(&self) -> u64 {
        self.total_env_steps / self.batch_size() as u64
    }

    pub fn adam_eps(&self) -> f64 {
        self.train.adam_eps.unwrap_or(match self.algorithm {
            Algorithm::Ppo => 1e-5,
            Algorithm::Pqn => 1e-8,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_envs == 0 || self.n_ro == 0 {
            return Err(invalid("n_envs and n_ro must be >= 1"));
        }
        let b = self.batch_size() as u64;
        if self.total_env_steps == 0 || self.total_env_steps % b != 0 {
            return Err(invalid(format!(
                "total_env_steps ({}) must be a positive multiple of n_envs × n_ro ({b})",
                self.total_env_steps
            )));
        }
        let t = &self.train;
        if t.epochs == 0 || t.num_minibatches == 0 || self.batch_size() % t.num_minibatches != 0 {
            return Err(invalid(format!(
                "batch size {} must be divisible by train.num_minibatches ({}), epochs >= 1",
                self.batch_size(),
                t.num_minibatches
            )));
        }
        if !(t.lr > 0.0) || !(t.max_grad_norm > 0.0) || !(0.0..1.0).contains(&t.gamma) {
            return Err(invalid("need train.lr > 0, train.max_grad_norm > 0, 0 <= train.gamma < 1"));
        }
        if let Some(eps) = t.adam_eps {
            if !(eps > 0.0) {
                return Err(invalid("train.adam_eps must be > 0"));
            }
        }
        let p = &self.ppo;
        if !(0.0..=1.0).contains(&p.lambda) || !(p.clip_eps > 0.0) || p.c1 < 0.0 || p.c2 < 0.0 {
            return Err(invalid("need 0 <= ppo.lambda <= 1, ppo.clip_eps > 0, ppo.c1 >= 0, ppo.c2 >= 0"));
        }
        let q = &self.pqn;
        if !(0.0 <= q.eps_end && q.eps_end <= q.eps_start && q.eps_start <= 1.0) {
            return Err(invalid("need 0 <= pqn.eps_end <= pqn.eps_start <= 1"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds must not be empty"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(invalid("seeds must be distinct"));
        }
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return Err(invalid("network.hidden must be a non-empty list of positive widths"));
        }
        let d = &self.diagnostics;
        if d.metric_cadence == 0 || d.coverage_grid == 0 || !(d.rank_tau > 0.0 && d.rank_tau <= 1.0) {
            return Err(invalid(
                "need diagnostics.metric_cadence >= 1, diagnostics.coverage_grid >= 1, 0 < diagnostics.rank_tau <= 1",
            ));
        }
        if d.dormant_eps < 0.0 || d.kurtosis_eps < 0.0 {
            return Err(invalid("diagnostics thresholds must be >= 0"));
        }
        if self.eval.score_window == 0 {
            return Err(invalid("eval.score_window must be >= 1"));
        }
        Ok(())
    }

    /// Parses a TOML document and applies `key=value` overrides.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Toml(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| invalid(e.to_string()))?;
        Ok(cfg)
    }

    /// Loads a TOML config, or the resolved config echoed in a run's `manifest.json`.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let manifest: serde_json::Value = serde_json::from_str(&text)?;
            let config = manifest.get("config").cloned().unwrap_or(manifest);
            let mut cfg: ExperimentConfig = serde_json::from_value(config)?;
            if !overrides.is_empty() {
                let toml_text = cfg.to_toml()?;
                cfg = Self::from_toml_str(&toml_text, overrides)?;
            }
            return Ok(cfg);
        }
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Toml(e.to_string()))
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies one `dotted.key=value` override to a TOML table.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(format!("override `{assignment}` is not of the form key=value")))?;
    set_path(table, key.trim(), parse_value(raw.trim()))
}

pub fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| invalid(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
