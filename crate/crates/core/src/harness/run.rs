//! Training loop for one config over all of its seeds.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, ExperimentConfig};
use super::reference::{reference_scores, ReferenceScores};
use crate::diagnostics::{
    coverage, dormant_fraction, ess_percent, feature_rank, grad_log_kurtosis, policy_variance, project_2d, weight_norm,
    MetricSnapshot, CSV_HEADER,
};
use crate::envs::{make_env, VecEnv};
use crate::error::{Error, Result};
use crate::numerics::{AdamState, Matrix};
use crate::pqn::{pqn_update, EpsilonGreedyPolicy, EpsilonSchedule, PqnHyper, QNetwork};
use crate::ppo::{ppo_update, ActorCritic, PpoHyper};
use crate::rollout::{collect, compute_gae};
use crate::seed::{derive_indexed, derive_seed, purpose, rng_for};
use crate::stats::{normalize_score, RunRecord};

/// Diagnostics inputs shared by both algorithms.
struct UpdateView<'a> {
    features: &'a Matrix,
    neuron_scores: &'a [f64],
    first_grad: &'a [f64],
    weight_norm: f64,
    ess_pct: Option<f64>,
    probs: Option<&'a Matrix>,
}

fn snapshot(
    cfg: &ExperimentConfig,
    env_steps: u64,
    episodic_return_mean: Option<f64>,
    v: &UpdateView,
) -> Result<MetricSnapshot> {
    let d = &cfg.diagnostics;
    let projection = project_2d(v.features)?;
    Ok(MetricSnapshot {
        env_steps,
        episodic_return_mean,
        feature_rank: feature_rank(v.features, d.rank_tau)?,
        dormant_pct: dormant_fraction(v.neuron_scores, d.dormant_eps),
        weight_norm: v.weight_norm,
        grad_log_kurtosis: grad_log_kurtosis(v.first_grad, d.kurtosis_eps)?,
        ess_pct: v.ess_pct,
        policy_variance: v.probs.map(policy_variance).transpose()?,
        coverage: coverage(&projection.points, d.coverage_grid)?,
    })
}

enum Learner {
    Ppo(ActorCritic),
    Pqn(QNetwork),
}

/// Everything one seed produced, including partial output when training failed.
#[derive(Debug)]
pub struct SeedTrace {
    pub seed: u64,
    pub snapshots: Vec<MetricSnapshot>,
    pub episode_returns: Vec<f64>,
    pub updates_completed: u64,
    pub env_steps: u64,
    pub error: Option<Error>,
}

impl SeedTrace {
    /// Mean return over the last `window` completed episodes.
    pub fn final_score(&self, window: usize) -> Option<f64> {
        if self.episode_returns.is_empty() {
            return None;
        }
        let tail = &self.episode_returns[self.episode_returns.len().saturating_sub(window)..];
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    }
}

fn rolling_mean(window: &VecDeque<f64>) -> Option<f64> {
    (!window.is_empty()).then(|| window.iter().sum::<f64>() / window.len() as f64)
}

/// Trains one seed. Never panics on numerical failure: the error is returned
/// inside the trace together with every snapshot taken before it.
pub fn train_seed(cfg: &ExperimentConfig, seed: u64) -> SeedTrace {
    let mut trace = SeedTrace {
        seed,
        snapshots: Vec::new(),
        episode_returns: Vec::new(),
        updates_completed: 0,
        env_steps: 0,
        error: None,
    };
    if let Err(e) = train_inner(cfg, seed, &mut trace) {
        trace.error = Some(e);
    }
    trace
}

fn train_inner(cfg: &ExperimentConfig, seed: u64, trace: &mut SeedTrace) -> Result<()> {
    cfg.validate()?;
    let mdp = cfg.env.mdp();
    let mut env: VecEnv = make_env(cfg.env, cfg.n_envs, derive_seed(seed, purpose::ENV))?;
    let mut init_rng = rng_for(seed, purpose::INIT);
    let mut act_rng = rng_for(
        seed,
        match cfg.algorithm {
            Algorithm::Ppo => purpose::ACTION,
            Algorithm::Pqn => purpose::EXPLORE,
        },
    );
    let hidden = &cfg.network.hidden;
    let mut learner = match cfg.algorithm {
        Algorithm::Ppo => Learner::Ppo(ActorCritic::new(
            cfg.network.architecture,
            mdp.observation_dim,
            mdp.num_actions,
            hidden,
            &mut init_rng,
        )?),
        Algorithm::Pqn => Learner::Pqn(QNetwork::new(mdp.observation_dim, mdp.num_actions, hidden, &mut init_rng)?),
    };
    let num_params = match &learner {
        Learner::Ppo(n) => n.num_params(),
        Learner::Pqn(n) => n.params().len(),
    };
    let mut opt = AdamState::new(num_params, cfg.train.lr, cfg.adam_eps());
    let ppo_hyper = PpoHyper {
        clip_eps: cfg.ppo.clip_eps,
        c1: cfg.ppo.c1,
        c2: cfg.ppo.c2,
        epochs: cfg.train.epochs,
        num_minibatches: cfg.train.num_minibatches,
        max_grad_norm: cfg.train.max_grad_norm,
        normalize_advantages: cfg.ppo.normalize_advantages,
    };
    let pqn_hyper = PqnHyper {
        gamma: cfg.train.gamma,
        epochs: cfg.train.epochs,
        num_minibatches: cfg.train.num_minibatches,
        max_grad_norm: cfg.train.max_grad_norm,
    };
    let schedule = EpsilonSchedule {
        eps_start: cfg.pqn.eps_start,
        eps_end: cfg.pqn.eps_end,
        decay_steps: cfg.pqn.eps_decay_steps,
    };

    let num_updates = cfg.num_updates();
    let batch_steps = cfg.batch_size() as u64;
    let mut window: VecDeque<f64> = VecDeque::with_capacity(cfg.eval.score_window);
    for u in 0..num_updates {
        opt.lr = if cfg.train.lr_anneal {
            cfg.train.lr * (1.0 - u as f64 / num_updates as f64)
        } else {
            cfg.train.lr
        };
        let plan_seed = derive_indexed(seed, purpose::MINIBATCH, u);
        let take_snapshot = (u + 1) % cfg.diagnostics.metric_cadence as u64 == 0 || u + 1 == num_updates;
        let (batch, view_data) = match &mut learner {
            Learner::Ppo(net) => {
                let mut batch = collect(net, &mut env, cfg.n_ro, &mut act_rng)?;
                compute_gae(&mut batch, cfg.train.gamma, cfg.ppo.lambda)?;
                let stats = ppo_update(net, &batch, &ppo_hyper, &mut opt, plan_seed)?;
                let data = take_snapshot
                    .then(|| -> Result<_> {
                        let ess = ess_percent(&stats.log_probs_after, &batch.log_probs)?;
                        Ok((stats, Some(ess), weight_norm(net.params())))
                    })
                    .transpose()?
                    .map(|(s, ess, w)| (s.features, s.neuron_scores, s.first_grad, w, ess, Some(s.probs_before)));
                (batch, data)
            }
            Learner::Pqn(net) => {
                let eps = schedule.value(trace.env_steps);
                let batch = collect(&mut EpsilonGreedyPolicy { net, eps }, &mut env, cfg.n_ro, &mut act_rng)?;
                let stats = pqn_update(net, &batch, &pqn_hyper, &mut opt, plan_seed)?;
                let data = take_snapshot.then(|| {
                    let w = weight_norm(net.params().theta.iter());
                    (stats.features, stats.neuron_scores, stats.first_grad, w, None, None)
                });
                (batch, data)
            }
        };
        trace.env_steps += batch_steps;
        trace.updates_completed += 1;
        for &r in &batch.episode_returns {
            if window.len() == cfg.eval.score_window {
                window.pop_front();
            }
            window.push_back(r);
        }
        trace.episode_returns.extend_from_slice(&batch.episode_returns);
        if let Some((features, scores, first_grad, w, ess, probs)) = view_data {
            let view = UpdateView {
                features: &features,
                neuron_scores: &scores,
                first_grad: &first_grad,
                weight_norm: w,
                ess_pct: ess,
                probs: probs.as_ref(),
            };
            if !w.is_finite() {
                return Err(Error::NonFinite("network weights"));
            }
            trace
                .snapshots
                .push(snapshot(cfg, trace.env_steps, rolling_mean(&window), &view)?);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub updates_completed: u64,
    pub env_steps: u64,
    pub final_score: Option<f64>,
    pub normalized_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub crate_version: String,
    pub config: ExperimentConfig,
    pub reference: ReferenceScores,
    pub seeds: Vec<SeedSummary>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub records: Vec<RunRecord>,
}

impl RunOutcome {
    pub fn failed_seeds(&self) -> impl Iterator<Item = &SeedSummary> {
        self.manifest.seeds.iter().filter(|s| s.status != "ok")
    }
}

pub fn metrics_csv(snapshots: &[MetricSnapshot]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in snapshots {
        out.push_str(&s.to_csv_row());
        out.push('\n');
    }
    out
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
}

/// Trains every seed of `cfg`, writing
/// `manifest.json`, `records.json` and `seed_<s>/metrics.csv` under `cfg.output_dir`.
///
/// A seed that fails numerically keeps its partial metrics and is marked failed
/// in the manifest; the other seeds are unaffected. Invalid configs are errors.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    build_pool(cfg.workers)?.install(|| run_in_current_pool(cfg))
}

/// `run_experiment` on the caller's rayon pool.
pub(crate) fn run_in_current_pool(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    let reference = reference_scores(cfg.env);
    let traces: Vec<SeedTrace> = cfg.seeds.par_iter().map(|&s| train_seed(cfg, s)).collect();

    let mut seeds = Vec::with_capacity(traces.len());
    let mut records = Vec::new();
    for t in &traces {
        let rel = format!("seed_{}/metrics.csv", t.seed);
        write_file(&dir.join(&rel), &metrics_csv(&t.snapshots))?;
        let final_score = t.final_score(cfg.eval.score_window);
        let normalized = final_score.map(|s| normalize_score(s, reference.random, reference.optimal));
        let error = match (&t.error, final_score) {
            (Some(e), _) => Some(e.to_string()),
            (None, None) => Some("no episode completed".to_string()),
            (None, Some(_)) => None,
        };
        if error.is_none() {
            records.push(RunRecord {
                env: cfg.env,
                config_id: cfg.config_id.clone(),
                seed: t.seed,
                final_score: final_score.unwrap(),
                normalized_score: normalized.unwrap(),
                metrics: rel,
            });
        }
        seeds.push(SeedSummary {
            seed: t.seed,
            status: if error.is_none() { "ok" } else { "failed" }.into(),
            error,
            updates_completed: t.updates_completed,
            env_steps: t.env_steps,
            final_score,
            normalized_score: normalized,
        });
    }
    let manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        reference,
        seeds,
    };
    write_file(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)?;
    write_file(&dir.join("records.json"), &serde_json::to_string_pretty(&records)?)?;
    Ok(RunOutcome { dir, manifest, records })
}
