use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use vecrl::harness::{emit_report, run_experiment, run_sweep, ExperimentConfig, ReportOptions, SweepSpec};

#[derive(Parser)]
#[command(name = "vecrl", version, about = "Vectorised PPO / PQN experiments with learning diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one config over its seeds.
    Run {
        /// Experiment TOML, or a run's manifest.json to reproduce it.
        config: PathBuf,
        /// Override a config key, e.g. --set train.lr=5e-4 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Write the aggregate report for this run when done.
        #[arg(long)]
        report: bool,
    },
    /// Run every point of a sweep, then write the aggregate report.
    Sweep {
        spec: PathBuf,
        /// Sweep output directory (replaces the spec's `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override a key of the sweep's base config (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Aggregate every run under a directory into report.json and plots.
    Report {
        dir: PathBuf,
        #[arg(long, default_value_t = 2000)]
        resamples: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check a config (or, with --sweep, a sweep spec) and print the resolved result.
    Validate {
        path: PathBuf,
        #[arg(long)]
        sweep: bool,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            overrides,
            report,
        } => {
            let cfg = ExperimentConfig::load(&config, &overrides)
                .with_context(|| format!("loading {}", config.display()))?;
            let out = run_experiment(&cfg)?;
            for s in &out.manifest.seeds {
                match (&s.error, s.normalized_score) {
                    (None, Some(n)) => println!("seed {}: score {:.4} (normalized {n:.4})", s.seed, s.final_score.unwrap_or(f64::NAN)),
                    (err, _) => println!("seed {}: FAILED after {} updates: {}", s.seed, s.updates_completed, err.as_deref().unwrap_or("unknown")),
                }
            }
            println!("wrote {}", out.dir.display());
            if report {
                if out.records.is_empty() {
                    bail!("every seed failed; nothing to report");
                }
                emit_report(&out.dir, &ReportOptions::default())?;
            }
            if out.failed_seeds().count() > 0 {
                bail!("{} seed(s) failed", out.failed_seeds().count());
            }
        }
        Command::Sweep { spec, out, overrides } => {
            let mut sweep = SweepSpec::load(&spec).with_context(|| format!("loading {}", spec.display()))?;
            if out.is_some() {
                sweep.output_dir = out;
            }
            let outcomes = run_sweep(&sweep, &overrides)?;
            let failed: usize = outcomes.iter().map(|o| o.failed_seeds().count()).sum();
            println!("{} runs written under {}", outcomes.len(), sweep.output_dir().display());
            if failed > 0 {
                eprintln!("warning: {failed} seed(s) failed; see the run manifests");
            }
        }
        Command::Report {
            dir,
            resamples,
            level,
            seed,
        } => {
            let report = emit_report(&dir, &ReportOptions { resamples, level, seed })?;
            for (id, r) in &report {
                println!(
                    "{id}: IQM {:.4} [{:.4}, {:.4}]",
                    r.overall.iqm, r.overall.ci_low, r.overall.ci_high
                );
            }
        }
        Command::Validate { path, sweep, overrides } => {
            if sweep {
                let spec = SweepSpec::load(&path)?;
                for p in spec.points(&overrides)? {
                    println!("{} [{}] -> {}", p.config_id, p.config.env, p.config.output_dir.display());
                }
            } else {
                let cfg = ExperimentConfig::load(&path, &overrides)?;
                cfg.validate()?;
                print!("{}", cfg.to_toml()?);
            }
        }
    }
    Ok(())
}
