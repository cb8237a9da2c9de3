//! Parallelised Q-network: one LayerNorm Q-network trained on freshly collected
//! batches by regressing onto one-step bootstrapped targets. The bootstrap uses
//! the same parameters with the gradient stopped; there is no replay buffer and
//! no target network.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::neuron_scores;
use crate::error::{Error, Result};
use crate::numerics::{AdamState, Matrix, MlpSpec, NetworkParams};
use crate::ppo::clip_grad_norm;
use crate::rollout::{iterate_minibatches, ActionSample, MinibatchPlan, Policy, RolloutBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    params: NetworkParams,
}

impl QNetwork {
    pub fn new(obs_dim: usize, num_actions: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        let spec = MlpSpec::new(obs_dim, hidden.to_vec(), num_actions, true);
        let params = NetworkParams::orthogonal(spec, std::f64::consts::SQRT_2, &[(num_actions, 1.0)], rng)?;
        Ok(Self { params })
    }

    pub fn from_params(params: NetworkParams) -> Result<Self> {
        if !params.spec().layer_norm {
            return Err(Error::InvalidArgument("Q-network requires LayerNorm".into()));
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut NetworkParams {
        &mut self.params
    }

    pub fn num_actions(&self) -> usize {
        self.params.spec().output_dim
    }

    pub fn q_values(&self, observations: &Matrix) -> Result<Matrix> {
        Ok(self.params.forward(observations)?.output().clone())
    }
}

/// Linear decay from `eps_start` to `eps_end` over `decay_steps` env steps, then flat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub eps_start: f64,
    pub eps_end: f64,
    pub decay_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            eps_start: 1.0,
            eps_end: 0.011,
            decay_steps: 250_000,
        }
    }
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.eps_end && self.eps_end <= self.eps_start && self.eps_start <= 1.0) {
            return Err(Error::InvalidArgument("need 0 <= eps_end <= eps_start <= 1".into()));
        }
        Ok(())
    }

    pub fn value(&self, env_steps: u64) -> f64 {
        if self.decay_steps == 0 || env_steps >= self.decay_steps {
            return self.eps_end;
        }
        let frac = env_steps as f64 / self.decay_steps as f64;
        self.eps_start + frac * (self.eps_end - self.eps_start)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy action (lowest index on ties) with probability `1 − eps`, else uniform.
pub fn epsilon_greedy(q_values: &Matrix, eps: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let a = q_values.cols();
    (0..q_values.rows())
        .map(|r| {
            if eps > 0.0 && rng.gen::<f64>() < eps {
                rng.gen_range(0..a)
            } else {
                argmax(q_values.row(r))
            }
        })
        .collect()
}

/// `r + γ (1 − done) max_a' Q(s', a')`.
pub fn pqn_target(rewards: &[f64], dones: &[bool], next_q: &Matrix, gamma: f64) -> Result<Vec<f64>> {
    if rewards.len() != dones.len() || rewards.len() != next_q.rows() {
        return Err(Error::dim("pqn_target", rewards.len(), next_q.rows()));
    }
    Ok(rewards
        .iter()
        .zip(dones)
        .enumerate()
        .map(|(i, (&r, &d))| {
            if d {
                r
            } else {
                let row = next_q.row(i);
                r + gamma * row[argmax(row)]
            }
        })
        .collect())
}

/// Behaviour policy used while collecting: ε-greedy on the current network.
pub struct EpsilonGreedyPolicy<'a> {
    pub net: &'a QNetwork,
    pub eps: f64,
}

impl Policy for EpsilonGreedyPolicy<'_> {
    fn act(&mut self, observations: &Matrix, rng: &mut ChaCha8Rng) -> Result<ActionSample> {
        let q = self.net.q_values(observations)?;
        let actions = epsilon_greedy(&q, self.eps, rng);
        let values = (0..q.rows()).map(|r| q.get(r, actions[r])).collect();
        Ok(ActionSample {
            log_probs: vec![0.0; actions.len()],
            actions,
            values,
        })
    }

    fn values(&self, observations: &Matrix) -> Result<Vec<f64>> {
        let q = self.net.q_values(observations)?;
        Ok((0..q.rows()).map(|r| q.row(r)[argmax(q.row(r))]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PqnHyper {
    pub gamma: f64,
    pub epochs: usize,
    pub num_minibatches: usize,
    pub max_grad_norm: f64,
}

impl Default for PqnHyper {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            epochs: 4,
            num_minibatches: 4,
            max_grad_norm: 0.5,
        }
    }
}

/// Mean squared TD error of `Q(s, a)` against fixed `targets`, and its gradient.
pub fn pqn_loss_grad(
    net: &QNetwork,
    observations: &Matrix,
    actions: &[usize],
    targets: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let n = observations.rows();
    if actions.len() != n || targets.len() != n {
        return Err(Error::dim("pqn_loss_grad", n, actions.len().min(targets.len())));
    }
    let tape = net.params.forward(observations)?;
    let q = tape.output();
    let mut d_out = Matrix::zeros(n, q.cols());
    let mut loss = 0.0;
    for r in 0..n {
        let err = q.get(r, actions[r]) - targets[r];
        loss += err * err;
        d_out.set(r, actions[r], 2.0 * err / n as f64);
    }
    let grad = net.params.backward(&tape, &d_out)?;
    Ok((loss / n as f64, grad))
}

#[derive(Debug, Clone)]
pub struct PqnStats {
    pub adam_steps: usize,
    pub mean_loss: f64,
    pub first_grad: Vec<f64>,
    /// Q-values over the whole batch before the update.
    pub q_values: Matrix,
    pub features: Matrix,
    pub neuron_scores: Vec<f64>,
}

pub fn pqn_update(
    net: &mut QNetwork,
    batch: &RolloutBatch,
    hyper: &PqnHyper,
    opt: &mut AdamState,
    plan_seed: u64,
) -> Result<PqnStats> {
    if !(0.0..1.0).contains(&hyper.gamma) {
        return Err(Error::InvalidArgument(format!("gamma must be in [0, 1), got {}", hyper.gamma)));
    }
    let before = net.params.forward(&batch.observations)?;
    let q_values = before.output().clone();
    let features = before.features().clone();
    let scores = neuron_scores(before.hidden());
    drop(before);

    let next_obs = batch.next_observations();
    let plan = MinibatchPlan {
        epochs: hyper.epochs,
        num_minibatches: hyper.num_minibatches,
        seed: plan_seed,
    };
    let sets = iterate_minibatches(batch.len(), &plan)?;
    let mut first_grad = Vec::new();
    let mut sum_loss = 0.0;
    for (k, idx) in sets.iter().enumerate() {
        let obs = batch.observations.select_rows(idx);
        let next_q = net.q_values(&next_obs.select_rows(idx))?;
        let rewards: Vec<f64> = idx.iter().map(|&i| batch.rewards[i]).collect();
        let dones: Vec<bool> = idx.iter().map(|&i| batch.dones[i]).collect();
        let actions: Vec<usize> = idx.iter().map(|&i| batch.actions[i]).collect();
        let targets = pqn_target(&rewards, &dones, &next_q, hyper.gamma)?;
        let (loss, mut grad) = pqn_loss_grad(net, &obs, &actions, &targets)?;
        clip_grad_norm(&mut grad, hyper.max_grad_norm);
        if k == 0 {
            first_grad = grad.clone();
        }
        opt.step_chunks(&mut [net.params.theta.as_mut_slice()], &grad)?;
        sum_loss += loss;
    }
    Ok(PqnStats {
        adam_steps: sets.len(),
        mean_loss: sum_loss / sets.len() as f64,
        first_grad,
        q_values,
        features,
        neuron_scores: scores,
    })
}
