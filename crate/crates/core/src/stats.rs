//! Aggregate evaluation: normalized scores, interquartile mean, and stratified
//! bootstrap confidence intervals over environments × seeds.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::EnvName;
use crate::error::{Error, Result};
use crate::seed::derive_indexed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub env: EnvName,
    pub config_id: String,
    pub seed: u64,
    pub final_score: f64,
    pub normalized_score: f64,
    /// Path of the per-seed metrics CSV, relative to the run directory.
    pub metrics: String,
}

/// `(score − random) / (optimal − random)`.
pub fn normalize_score(score: f64, ref_random: f64, ref_optimal: f64) -> f64 {
    (score - ref_random) / (ref_optimal - ref_random)
}

/// Mean of the middle half of the sorted scores. Each sorted score covers an
/// interval of width `1/n` of the empirical CDF; scores straddling the 25% or 75%
/// cut contribute in proportion to their overlap with `[0.25, 0.75]`.
pub fn iqm(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("IQM of an empty sample".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(iqm_sorted(&sorted))
}

fn iqm_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let mut acc = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let lo = (i as f64 / n).max(0.25);
        let hi = ((i + 1) as f64 / n).min(0.75);
        if hi > lo {
            acc += (hi - lo) * x;
        }
    }
    acc / 0.5
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub iqm: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    pub n_seeds: usize,
    #[serde(flatten)]
    pub interval: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub config_id: String,
    #[serde(flatten)]
    pub overall: Interval,
    pub level: f64,
    pub resamples: usize,
    pub per_env: BTreeMap<EnvName, StratumSummary>,
}

fn bootstrap_interval(strata: &[Vec<f64>], resamples: usize, level: f64, seed: u64) -> Interval {
    let pooled: Vec<f64> = strata.iter().flatten().copied().collect();
    let point = iqm(&pooled).expect("non-empty strata");
    if resamples == 0 {
        return Interval {
            iqm: point,
            ci_low: point,
            ci_high: point,
        };
    }
    let mut stats: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(seed, "bootstrap-replicate", b as u64));
            let mut sample = Vec::with_capacity(pooled.len());
            for stratum in strata {
                for _ in 0..stratum.len() {
                    sample.push(stratum[rng.gen_range(0..stratum.len())]);
                }
            }
            sample.sort_by(f64::total_cmp);
            iqm_sorted(&sample)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Interval {
        iqm: point,
        // percentile endpoints can miss a skewed point estimate; widen to contain it
        ci_low: quantile_sorted(&stats, alpha).min(point),
        ci_high: quantile_sorted(&stats, 1.0 - alpha).max(point),
    }
}

/// Percentile bootstrap over the normalized scores of `records` (one config),
/// resampling seeds with replacement independently within each environment.
pub fn stratified_bootstrap_ci(
    records: &[RunRecord],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<AggregateReport> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to aggregate".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level must be in (0, 1), got {level}")));
    }
    let config_id = records[0].config_id.clone();
    if let Some(r) = records.iter().find(|r| r.config_id != config_id) {
        return Err(Error::InvalidArgument(format!(
            "mixed configs in one aggregate: {config_id} and {}",
            r.config_id
        )));
    }
    // BTreeMap + per-stratum seed sort make the result independent of record order.
    let mut by_env: BTreeMap<EnvName, Vec<(u64, f64)>> = BTreeMap::new();
    for r in records {
        if !r.normalized_score.is_finite() {
            return Err(Error::NonFinite("normalized score"));
        }
        by_env.entry(r.env).or_default().push((r.seed, r.normalized_score));
    }
    let strata: Vec<Vec<f64>> = by_env
        .values_mut()
        .map(|v| {
            v.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            v.iter().map(|x| x.1).collect()
        })
        .collect();
    let overall = bootstrap_interval(&strata, resamples, level, seed);
    let per_env = by_env
        .keys()
        .zip(&strata)
        .map(|(&env, s)| {
            let interval = bootstrap_interval(std::slice::from_ref(s), resamples, level, seed);
            (env, StratumSummary { n_seeds: s.len(), interval })
        })
        .collect();
    Ok(AggregateReport {
        config_id,
        overall,
        level,
        resamples,
        per_env,
    })
}
