//! Sweeps: a base config plus axes of overrides, expanded as a cartesian product.
//!
//! ```toml
//! envs = ["chain_walk", "noisy_bandit"]
//! fixed_budget = 1024          # keep n_envs × n_ro constant; n_ro is derived
//!
//! [axes]
//! n_envs = [8, 64]
//! lr_scale = [1.0, 2.0]        # multiplies train.lr
//!
//! [base]
//! algorithm = "ppo"
//! total_env_steps = 204800
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{set_path, ExperimentConfig};
use super::report::{emit_report, ReportOptions};
use super::run::{build_pool, run_in_current_pool, RunOutcome};
use crate::envs::EnvName;
use crate::error::{Error, Result};

pub const LR_SCALE_AXIS: &str = "lr_scale";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Environments every point is run on; empty means the base env only.
    #[serde(default)]
    pub envs: Vec<EnvName>,
    #[serde(default)]
    pub fixed_budget: Option<usize>,
    #[serde(default)]
    pub axes: BTreeMap<String, Vec<toml::Value>>,
    #[serde(default)]
    pub base: toml::Table,
    #[serde(default)]
    pub report: ReportOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub config_id: String,
    pub config: ExperimentConfig,
}

fn show(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Directory-safe form of a config id.
pub fn dir_name(config_id: &str) -> String {
    config_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-=".contains(c) { c } else { '_' })
        .collect()
}

impl SweepSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Expands the axes (keys in sorted order, last key varying fastest) and the
    /// env list into validated configs. `overrides` apply to the base first.
    pub fn points(&self, overrides: &[String]) -> Result<Vec<SweepPoint>> {
        let mut base = self.base.clone();
        for o in overrides {
            super::config::apply_override(&mut base, o)?;
        }
        let axes: Vec<(&String, &Vec<toml::Value>)> = self.axes.iter().collect();
        if let Some((k, _)) = axes.iter().find(|(_, v)| v.is_empty()) {
            return Err(Error::InvalidConfig(format!("sweep axis `{k}` has no values")));
        }
        let total: usize = axes.iter().map(|(_, v)| v.len()).product();
        let base_out = self
            .output_dir
            .clone()
            .unwrap_or_else(|| ExperimentConfig::default().output_dir);
        let mut out = Vec::new();
        for flat in 0..total {
            let mut rem = flat;
            let mut choice = vec![0; axes.len()];
            for (slot, (_, vals)) in choice.iter_mut().zip(&axes).rev() {
                *slot = rem % vals.len();
                rem /= vals.len();
            }
            let mut table = base.clone();
            let mut lr_scale = 1.0;
            let mut id_parts = Vec::new();
            for ((key, vals), &c) in axes.iter().zip(&choice) {
                let v = &vals[c];
                id_parts.push(format!("{key}={}", show(v)));
                if key.as_str() == LR_SCALE_AXIS {
                    lr_scale = v
                        .as_float()
                        .or_else(|| v.as_integer().map(|i| i as f64))
                        .ok_or_else(|| Error::InvalidConfig("lr_scale values must be numbers".into()))?;
                } else {
                    set_path(&mut table, key, v.clone())?;
                }
            }
            let mut cfg: ExperimentConfig = table
                .clone()
                .try_into()
                .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
            if let Some(budget) = self.fixed_budget {
                if budget % cfg.n_envs != 0 {
                    return Err(Error::InvalidConfig(format!(
                        "fixed_budget {budget} is not divisible by n_envs {}",
                        cfg.n_envs
                    )));
                }
                cfg.n_ro = budget / cfg.n_envs;
                if !self.axes.contains_key("n_ro") && self.axes.contains_key("n_envs") {
                    id_parts.push(format!("n_ro={}", cfg.n_ro));
                }
            }
            cfg.train.lr *= lr_scale;
            let config_id = if id_parts.is_empty() {
                cfg.config_id.clone()
            } else {
                id_parts.join(",")
            };
            let envs = if self.envs.is_empty() { vec![cfg.env] } else { self.envs.clone() };
            for env in envs {
                let mut c = cfg.clone();
                c.env = env;
                c.config_id = config_id.clone();
                c.output_dir = base_out.join(dir_name(&config_id)).join(env.as_str());
                c.validate()?;
                out.push(SweepPoint {
                    config_id: config_id.clone(),
                    config: c,
                });
            }
        }
        Ok(out)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| ExperimentConfig::default().output_dir)
    }
}

/// Runs every point of the sweep, then writes the aggregate report. Points and
/// their seeds share one pool of `base.workers` threads.
pub fn run_sweep(spec: &SweepSpec, overrides: &[String]) -> Result<Vec<RunOutcome>> {
    let points = spec.points(overrides)?;
    let workers = points.first().map_or(0, |p| p.config.workers);
    let outcomes = build_pool(workers)?.install(|| {
        points
            .par_iter()
            .map(|p| run_in_current_pool(&p.config))
            .collect::<Result<Vec<_>>>()
    })?;
    emit_report(&spec.output_dir(), &spec.report)?;
    Ok(outcomes)
}
