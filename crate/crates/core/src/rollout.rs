//! On-policy batch collection, GAE, and epoch/minibatch iteration.
//!
//! A batch holds `n_envs × n_ro` transitions. Samples are stored env-major:
//! sample `env * n_ro + t` is step `t` of sub-environment `env`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::VecEnv;
use crate::error::{ensure_finite, Error, Result};
use crate::numerics::Matrix;

/// What a behaviour policy reports for each row of an observation batch.
#[derive(Debug, Clone, Default)]
pub struct ActionSample {
    pub actions: Vec<usize>,
    /// `log π(a|s)` at sampling time. Zero for value-based policies.
    pub log_probs: Vec<f64>,
    /// Value estimate of each observation.
    pub values: Vec<f64>,
}

pub trait Policy {
    fn act(&mut self, observations: &Matrix, rng: &mut ChaCha8Rng) -> Result<ActionSample>;
    fn values(&self, observations: &Matrix) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub n_envs: usize,
    pub n_ro: usize,
    pub observations: Matrix,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// The episode ended on this transition (terminal or truncated).
    pub dones: Vec<bool>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// Value of the observation that follows each env's last step.
    pub bootstrap_values: Vec<f64>,
    /// Observation that follows each env's last step.
    pub final_observations: Matrix,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Returns of episodes completed during collection, in completion order.
    pub episode_returns: Vec<f64>,
}

impl RolloutBatch {
    #[inline]
    pub fn len(&self) -> usize {
        self.n_envs * self.n_ro
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, env: usize, t: usize) -> usize {
        env * self.n_ro + t
    }

    /// Observation following each sample (meaningless where `dones` is set).
    pub fn next_observations(&self) -> Matrix {
        let d = self.observations.cols();
        let mut next = Matrix::zeros(self.len(), d);
        for env in 0..self.n_envs {
            for t in 0..self.n_ro {
                let i = self.index(env, t);
                let src = if t + 1 < self.n_ro {
                    self.observations.row(i + 1)
                } else {
                    self.final_observations.row(env)
                };
                next.row_mut(i).copy_from_slice(src);
            }
        }
        next
    }
}

/// Steps every env `n_ro` times under `policy`. The envs are not reset first, so
/// consecutive batches continue the same episodes.
pub fn collect<P: Policy + ?Sized>(
    policy: &mut P,
    env: &mut VecEnv,
    n_ro: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RolloutBatch> {
    if n_ro == 0 {
        return Err(Error::InvalidArgument("n_ro must be >= 1".into()));
    }
    let n_envs = env.n_envs();
    let d = env.mdp().observation_dim;
    let size = n_envs * n_ro;
    let mut batch = RolloutBatch {
        n_envs,
        n_ro,
        observations: Matrix::zeros(size, d),
        actions: vec![0; size],
        rewards: vec![0.0; size],
        dones: vec![false; size],
        log_probs: vec![0.0; size],
        values: vec![0.0; size],
        bootstrap_values: vec![0.0; n_envs],
        final_observations: Matrix::zeros(n_envs, d),
        advantages: vec![0.0; size],
        returns: vec![0.0; size],
        episode_returns: Vec::new(),
    };
    let mut obs = env.observations();
    for t in 0..n_ro {
        let sample = policy.act(&obs, rng)?;
        if sample.actions.len() != n_envs {
            return Err(Error::dim("policy actions", n_envs, sample.actions.len()));
        }
        let step = env.step(&sample.actions)?;
        for e in 0..n_envs {
            let i = batch.index(e, t);
            batch.observations.row_mut(i).copy_from_slice(obs.row(e));
            batch.actions[i] = sample.actions[e];
            batch.log_probs[i] = sample.log_probs.get(e).copied().unwrap_or(0.0);
            batch.values[i] = sample.values.get(e).copied().unwrap_or(0.0);
            batch.rewards[i] = step.rewards[e];
            batch.dones[i] = step.dones[e];
            if let Some(ret) = step.episodic_returns[e] {
                batch.episode_returns.push(ret);
            }
        }
        obs = step.observations;
    }
    batch.bootstrap_values = policy.values(&obs)?;
    batch.final_observations = obs;
    Ok(batch)
}

/// Fills `advantages` and `returns` with generalized advantage estimates.
///
/// `δ_t = r_t + γ (1 − done_t) V(s_{t+1}) − V(s_t)` and
/// `A_t = δ_t + γ λ (1 − done_t) A_{t+1}`, scanning each env backwards from its
/// bootstrap value.
pub fn compute_gae(batch: &mut RolloutBatch, gamma: f64, lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) || !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= gamma < 1 and 0 <= lambda <= 1 (gamma = {gamma}, lambda = {lambda})"
        )));
    }
    for env in 0..batch.n_envs {
        let mut next_value = batch.bootstrap_values[env];
        let mut next_adv = 0.0;
        for t in (0..batch.n_ro).rev() {
            let i = batch.index(env, t);
            let live = if batch.dones[i] { 0.0 } else { 1.0 };
            let delta = batch.rewards[i] + gamma * live * next_value - batch.values[i];
            let adv = delta + gamma * lambda * live * next_adv;
            batch.advantages[i] = adv;
            batch.returns[i] = adv + batch.values[i];
            next_value = batch.values[i];
            next_adv = adv;
        }
    }
    ensure_finite(&batch.advantages, "advantages")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinibatchPlan {
    pub epochs: usize,
    pub num_minibatches: usize,
    pub seed: u64,
}

/// Index sets for `plan.epochs` passes over `0..batch_size`, each pass a fresh
/// permutation split into `num_minibatches` equal chunks.
pub fn iterate_minibatches(batch_size: usize, plan: &MinibatchPlan) -> Result<Vec<Vec<usize>>> {
    if plan.num_minibatches == 0 || batch_size % plan.num_minibatches != 0 {
        return Err(Error::InvalidArgument(format!(
            "batch size {batch_size} is not divisible by num_minibatches {}",
            plan.num_minibatches
        )));
    }
    let mb = batch_size / plan.num_minibatches;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut perm: Vec<usize> = (0..batch_size).collect();
    let mut out = Vec::with_capacity(plan.epochs * plan.num_minibatches);
    for _ in 0..plan.epochs {
        perm.shuffle(&mut rng);
        out.extend(perm.chunks(mb).map(<[usize]>::to_vec));
    }
    Ok(out)
}
