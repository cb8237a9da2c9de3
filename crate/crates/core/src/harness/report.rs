//! Aggregate report over every run found under a directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::write_file;
use super::svg::{line_plot, Series};
use crate::diagnostics::{MetricSnapshot, CSV_HEADER};
use crate::envs::EnvName;
use crate::error::{Error, Result};
use crate::seed::{derive_seed, purpose};
use crate::stats::{stratified_bootstrap_ci, AggregateReport, RunRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportOptions {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            resamples: 2000,
            level: 0.95,
            seed: 0,
        }
    }
}

/// One run directory: its records plus the directory they are relative to.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub dir: PathBuf,
    pub records: Vec<RunRecord>,
}

/// Finds every `records.json` under `root` (including `root` itself), in sorted order.
pub fn find_runs(root: &Path) -> Result<Vec<RunDir>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let rec = dir.join("records.json");
        if rec.is_file() {
            let text = fs::read_to_string(&rec).map_err(|e| Error::io(&rec, e))?;
            out.push(RunDir {
                dir: dir.clone(),
                records: serde_json::from_str(&text)?,
            });
        }
        let mut children: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        children.sort();
        stack.extend(children.into_iter().rev());
    }
    out.sort_by(|a, b| a.dir.cmp(&b.dir));
    Ok(out)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricSnapshot>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::InvalidArgument(format!("{}: unexpected CSV header", path.display())));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            MetricSnapshot::from_csv_row(l)
                .ok_or_else(|| Error::InvalidArgument(format!("{}: bad row `{l}`", path.display())))
        })
        .collect()
}

/// Mean and normal-approximation 95% band across seeds at each logged step.
fn seed_band(label: &str, runs: &[Vec<MetricSnapshot>], column: &str) -> Series {
    let mut by_step: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for run in runs {
        for s in run {
            if let Some(v) = s.column(column).filter(|v| v.is_finite()) {
                by_step.entry(s.env_steps).or_default().push(v);
            }
        }
    }
    let mut ser = Series {
        label: label.to_string(),
        x: Vec::new(),
        mean: Vec::new(),
        lo: Vec::new(),
        hi: Vec::new(),
    };
    for (step, vals) in by_step {
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        // a single seed has no spread to show; NaN suppresses the band
        let half = if vals.len() > 1 {
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            1.96 * (var / n).sqrt()
        } else {
            f64::NAN
        };
        ser.x.push(step as f64);
        ser.mean.push(mean);
        ser.lo.push(mean - half);
        ser.hi.push(mean + half);
    }
    ser
}

/// Aggregates every run under `root` into `root/report.json` (config id →
/// IQM with bootstrap CI, overall and per env) and one SVG per metric and env
/// under `root/plots/`.
pub fn emit_report(root: &Path, opts: &ReportOptions) -> Result<BTreeMap<String, AggregateReport>> {
    let runs = find_runs(root)?;
    if runs.is_empty() {
        return Err(Error::InvalidArgument(format!("no runs found under {}", root.display())));
    }
    let mut by_config: BTreeMap<String, Vec<RunRecord>> = BTreeMap::new();
    // env → config → per-seed metric series
    let mut curves: BTreeMap<EnvName, BTreeMap<String, Vec<Vec<MetricSnapshot>>>> = BTreeMap::new();
    for run in &runs {
        for r in &run.records {
            by_config.entry(r.config_id.clone()).or_default().push(r.clone());
            let snaps = read_metrics(&run.dir.join(&r.metrics))?;
            curves
                .entry(r.env)
                .or_default()
                .entry(r.config_id.clone())
                .or_default()
                .push(snaps);
        }
    }
    let boot_seed = derive_seed(opts.seed, purpose::BOOTSTRAP);
    let mut report = BTreeMap::new();
    for (id, recs) in &by_config {
        report.insert(id.clone(), stratified_bootstrap_ci(recs, opts.resamples, opts.level, boot_seed)?);
    }
    write_file(&root.join("report.json"), &serde_json::to_string_pretty(&report)?)?;

    let columns: Vec<&str> = CSV_HEADER.split(',').skip(1).collect();
    for (env, configs) in &curves {
        for col in &columns {
            let series: Vec<Series> = configs.iter().map(|(id, runs)| seed_band(id, runs, col)).collect();
            let svg = line_plot(&format!("{col} ({env})"), "env steps", col, &series);
            write_file(&root.join("plots").join(format!("{col}_{env}.svg")), &svg)?;
        }
    }
    Ok(report)
}
