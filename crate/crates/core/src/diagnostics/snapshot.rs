use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const CSV_HEADER: &str =
    "env_steps,return,feature_rank,dormant_pct,weight_norm,grad_log_kurtosis,ess_pct,policy_variance,coverage";

/// All diagnostics for one policy update. `None` marks a metric that is undefined
/// for this update (PQN has no likelihood ratios; no episode may have finished yet).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSnapshot {
    pub env_steps: u64,
    pub episodic_return_mean: Option<f64>,
    pub feature_rank: usize,
    pub dormant_pct: f64,
    pub weight_norm: f64,
    pub grad_log_kurtosis: Option<f64>,
    pub ess_pct: Option<f64>,
    pub policy_variance: Option<f64>,
    pub coverage: f64,
}

fn field(out: &mut String, v: Option<f64>) {
    out.push(',');
    if let Some(v) = v {
        let _ = write!(out, "{v}");
    }
}

impl MetricSnapshot {
    pub fn to_csv_row(&self) -> String {
        let mut s = self.env_steps.to_string();
        field(&mut s, self.episodic_return_mean);
        let _ = write!(s, ",{}", self.feature_rank);
        field(&mut s, Some(self.dormant_pct));
        field(&mut s, Some(self.weight_norm));
        field(&mut s, self.grad_log_kurtosis);
        field(&mut s, self.ess_pct);
        field(&mut s, self.policy_variance);
        field(&mut s, Some(self.coverage));
        s
    }

    pub fn from_csv_row(line: &str) -> Option<Self> {
        let cols: Vec<&str> = line.trim_end().split(',').collect();
        if cols.len() != 9 {
            return None;
        }
        let opt = |s: &str| -> Option<Option<f64>> {
            if s.is_empty() {
                Some(None)
            } else {
                s.parse().ok().map(Some)
            }
        };
        Some(Self {
            env_steps: cols[0].parse().ok()?,
            episodic_return_mean: opt(cols[1])?,
            feature_rank: cols[2].parse().ok()?,
            dormant_pct: cols[3].parse().ok()?,
            weight_norm: cols[4].parse().ok()?,
            grad_log_kurtosis: opt(cols[5])?,
            ess_pct: opt(cols[6])?,
            policy_variance: opt(cols[7])?,
            coverage: cols[8].parse().ok()?,
        })
    }

    /// Value of a named CSV column; `None` for absent metrics or unknown names.
    pub fn column(&self, name: &str) -> Option<f64> {
        match name {
            "env_steps" => Some(self.env_steps as f64),
            "return" => self.episodic_return_mean,
            "feature_rank" => Some(self.feature_rank as f64),
            "dormant_pct" => Some(self.dormant_pct),
            "weight_norm" => Some(self.weight_norm),
            "grad_log_kurtosis" => self.grad_log_kurtosis,
            "ess_pct" => self.ess_pct,
            "policy_variance" => self.policy_variance,
            "coverage" => Some(self.coverage),
            _ => None,
        }
    }
}
