//! Clipped-surrogate PPO over a collected batch, with shared or decoupled
//! actor-critic encoders.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{ess_percent, neuron_scores};
use crate::error::{Error, Result};
use crate::numerics::{AdamState, Matrix, MlpSpec, NetworkParams, Tape};
use crate::rollout::{iterate_minibatches, ActionSample, MinibatchPlan, Policy, RolloutBatch};

const HIDDEN_GAIN: f64 = std::f64::consts::SQRT_2;
const POLICY_GAIN: f64 = 0.01;
const VALUE_GAIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// One encoder feeding both heads.
    Shared,
    /// Independent actor and critic networks.
    Decoupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoHyper {
    pub clip_eps: f64,
    pub c1: f64,
    pub c2: f64,
    pub epochs: usize,
    pub num_minibatches: usize,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
}

impl Default for PpoHyper {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            c1: 0.5,
            c2: 0.01,
            epochs: 4,
            num_minibatches: 4,
            max_grad_norm: 0.5,
            normalize_advantages: true,
        }
    }
}

impl PpoHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0) || self.c1 < 0.0 || self.c2 < 0.0 || !(self.max_grad_norm > 0.0) {
            return Err(Error::InvalidArgument(
                "PPO needs clip_eps > 0, c1 >= 0, c2 >= 0, max_grad_norm > 0".into(),
            ));
        }
        if self.epochs == 0 || self.num_minibatches == 0 {
            return Err(Error::InvalidArgument("epochs and num_minibatches must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    architecture: Architecture,
    num_actions: usize,
    /// Shared mode: outputs `num_actions` logits then the value. Decoupled: logits only.
    actor: NetworkParams,
    critic: Option<NetworkParams>,
}

/// Forward pass of the actor-critic on a batch of observations.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub actor_tape: Tape,
    pub critic_tape: Option<Tape>,
    /// Row-wise log-softmax of the logits.
    pub log_probs: Matrix,
    pub values: Vec<f64>,
}

impl Evaluation {
    pub fn probs(&self) -> Matrix {
        let mut p = self.log_probs.clone();
        p.data_mut().iter_mut().for_each(|v| *v = v.exp());
        p
    }

    pub fn entropy(&self, row: usize) -> f64 {
        -self.log_probs.row(row).iter().map(|&lp| lp.exp() * lp).sum::<f64>()
    }

    /// Last hidden layer of the policy encoder (the shared encoder in shared mode).
    pub fn features(&self) -> &Matrix {
        self.actor_tape.features()
    }
}

impl ActorCritic {
    pub fn new(
        architecture: Architecture,
        obs_dim: usize,
        num_actions: usize,
        hidden: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if num_actions < 2 {
            return Err(Error::InvalidArgument("need at least two actions".into()));
        }
        let (actor, critic) = match architecture {
            Architecture::Shared => {
                let spec = MlpSpec::new(obs_dim, hidden.to_vec(), num_actions + 1, false);
                let net = NetworkParams::orthogonal(spec, HIDDEN_GAIN, &[(num_actions, POLICY_GAIN), (1, VALUE_GAIN)], rng)?;
                (net, None)
            }
            Architecture::Decoupled => {
                let a_spec = MlpSpec::new(obs_dim, hidden.to_vec(), num_actions, false);
                let c_spec = MlpSpec::new(obs_dim, hidden.to_vec(), 1, false);
                let actor = NetworkParams::orthogonal(a_spec, HIDDEN_GAIN, &[(num_actions, POLICY_GAIN)], rng)?;
                let critic = NetworkParams::orthogonal(c_spec, HIDDEN_GAIN, &[(1, VALUE_GAIN)], rng)?;
                (actor, Some(critic))
            }
        };
        Ok(Self {
            architecture,
            num_actions,
            actor,
            critic,
        })
    }

    pub fn from_parts(
        architecture: Architecture,
        num_actions: usize,
        actor: NetworkParams,
        critic: Option<NetworkParams>,
    ) -> Result<Self> {
        let expected_out = match architecture {
            Architecture::Shared => num_actions + 1,
            Architecture::Decoupled => num_actions,
        };
        if actor.spec().output_dim != expected_out {
            return Err(Error::dim("actor output", expected_out, actor.spec().output_dim));
        }
        if (architecture == Architecture::Decoupled) != critic.is_some() {
            return Err(Error::InvalidArgument("critic network present iff decoupled".into()));
        }
        Ok(Self {
            architecture,
            num_actions,
            actor,
            critic,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn actor(&self) -> &NetworkParams {
        &self.actor
    }

    pub fn critic(&self) -> Option<&NetworkParams> {
        self.critic.as_ref()
    }

    pub fn num_params(&self) -> usize {
        self.actor.len() + self.critic.as_ref().map_or(0, NetworkParams::len)
    }

    /// All trainable parameters, actor first.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.actor
            .theta
            .iter()
            .chain(self.critic.iter().flat_map(|c| c.theta.iter()))
    }

    pub fn param_chunks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut chunks = vec![self.actor.theta.as_mut_slice()];
        if let Some(c) = self.critic.as_mut() {
            chunks.push(c.theta.as_mut_slice());
        }
        chunks
    }

    pub fn evaluate(&self, observations: &Matrix) -> Result<Evaluation> {
        let actor_tape = self.actor.forward(observations)?;
        let out = actor_tape.output();
        let a = self.num_actions;
        let n = observations.rows();
        let mut log_probs = Matrix::zeros(n, a);
        for r in 0..n {
            log_softmax(&out.row(r)[..a], log_probs.row_mut(r));
        }
        let (values, critic_tape) = match &self.critic {
            None => ((0..n).map(|r| out.get(r, a)).collect(), None),
            Some(critic) => {
                let t = critic.forward(observations)?;
                ((0..n).map(|r| t.output().get(r, 0)).collect(), Some(t))
            }
        };
        Ok(Evaluation {
            actor_tape,
            critic_tape,
            log_probs,
            values,
        })
    }

    /// Gradient of a loss given its derivatives with respect to the logits and values.
    fn backward(&self, eval: &Evaluation, d_logits: &Matrix, d_values: &[f64]) -> Result<Vec<f64>> {
        let n = d_logits.rows();
        let a = self.num_actions;
        match (&self.critic, &eval.critic_tape) {
            (None, _) => {
                let mut g = Matrix::zeros(n, a + 1);
                for r in 0..n {
                    g.row_mut(r)[..a].copy_from_slice(d_logits.row(r));
                    g.set(r, a, d_values[r]);
                }
                self.actor.backward(&eval.actor_tape, &g)
            }
            (Some(critic), Some(ct)) => {
                let mut grad = self.actor.backward(&eval.actor_tape, d_logits)?;
                let dv = Matrix::from_vec(n, 1, d_values.to_vec())?;
                grad.extend(critic.backward(ct, &dv)?);
                Ok(grad)
            }
            (Some(_), None) => Err(Error::InvalidArgument("evaluation is missing the critic tape".into())),
        }
    }
}

pub(crate) fn log_softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = l - lse;
    }
}

/// Samples index `k` with probability `exp(log_probs[k])` by inverting the CDF.
pub(crate) fn sample_categorical(log_probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, &lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return k;
        }
    }
    log_probs.len() - 1
}

impl Policy for ActorCritic {
    fn act(&mut self, observations: &Matrix, rng: &mut ChaCha8Rng) -> Result<ActionSample> {
        let eval = self.evaluate(observations)?;
        let n = observations.rows();
        let mut sample = ActionSample {
            actions: Vec::with_capacity(n),
            log_probs: Vec::with_capacity(n),
            values: eval.values.clone(),
        };
        for r in 0..n {
            let lp = eval.log_probs.row(r);
            let a = sample_categorical(lp, rng);
            sample.actions.push(a);
            sample.log_probs.push(lp[a]);
        }
        Ok(sample)
    }

    fn values(&self, observations: &Matrix) -> Result<Vec<f64>> {
        Ok(self.evaluate(observations)?.values)
    }
}

/// Loss terms of one minibatch. `total` is the negated objective, ready to minimize.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoLoss {
    pub total: f64,
    pub clip_term: f64,
    pub vf_term: f64,
    pub ent_term: f64,
    pub ratios: Vec<f64>,
}

pub fn ppo_loss(
    new_log_probs: &[f64],
    old_log_probs: &[f64],
    advantages: &[f64],
    new_values: &[f64],
    returns: &[f64],
    entropy: &[f64],
    hyper: &PpoHyper,
) -> Result<PpoLoss> {
    let n = new_log_probs.len();
    for (name, len) in [
        ("old_log_probs", old_log_probs.len()),
        ("advantages", advantages.len()),
        ("new_values", new_values.len()),
        ("returns", returns.len()),
        ("entropy", entropy.len()),
    ] {
        if len != n {
            return Err(Error::InvalidArgument(format!("{name} has length {len}, expected {n}")));
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty minibatch".into()));
    }
    let ratios: Vec<f64> = new_log_probs.iter().zip(old_log_probs).map(|(a, b)| (a - b).exp()).collect();
    if ratios.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("importance ratio"));
    }
    let m = n as f64;
    let clip_term = ratios
        .iter()
        .zip(advantages)
        .map(|(&r, &adv)| clipped_surrogate(r, adv, hyper.clip_eps))
        .sum::<f64>()
        / m;
    let vf_term = new_values.iter().zip(returns).map(|(v, t)| (v - t) * (v - t)).sum::<f64>() / m;
    let ent_term = entropy.iter().sum::<f64>() / m;
    Ok(PpoLoss {
        total: -clip_term + hyper.c1 * vf_term - hyper.c2 * ent_term,
        clip_term,
        vf_term,
        ent_term,
        ratios,
    })
}

/// `min(r·A, clip(r, 1−ε, 1+ε)·A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage;
    unclipped.min(clipped)
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`; returns the norm before.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Centres and scales to unit (population) standard deviation; only centres when
/// the spread is zero.
pub fn normalize(values: &mut [f64]) {
    let n = values.len() as f64;
    if values.is_empty() {
        return;
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = if std > 1e-12 { 1.0 / std } else { 1.0 };
    values.iter_mut().for_each(|v| *v = (*v - mean) * scale);
}

/// What the update saw and did, for diagnostics and bookkeeping.
#[derive(Debug, Clone)]
pub struct UpdateStats {
    pub adam_steps: usize,
    pub mean_loss: f64,
    pub mean_clip_term: f64,
    pub mean_vf_term: f64,
    pub mean_entropy: f64,
    /// Clipped gradient of the first minibatch, flattened over all parameters.
    pub first_grad: Vec<f64>,
    /// Largest pre-clip gradient norm seen.
    pub max_grad_norm_seen: f64,
    /// Action probabilities over the whole batch before and after the update.
    pub probs_before: Matrix,
    pub probs_after: Matrix,
    /// `log π_new(a_t|s_t)` over the whole batch after the update.
    pub log_probs_after: Vec<f64>,
    /// Mean minibatch ESS% within each epoch (ratios as seen by that minibatch's forward pass).
    pub epoch_ess: Vec<f64>,
    /// Last hidden layer of the policy encoder before the update.
    pub features: Matrix,
    /// Batch-mean absolute activation of every hidden unit before the update.
    pub neuron_scores: Vec<f64>,
}

pub fn ppo_update(
    net: &mut ActorCritic,
    batch: &RolloutBatch,
    hyper: &PpoHyper,
    opt: &mut AdamState,
    plan_seed: u64,
) -> Result<UpdateStats> {
    hyper.validate()?;
    if opt.m.len() != net.num_params() {
        return Err(Error::dim("optimizer state", net.num_params(), opt.m.len()));
    }
    let before = net.evaluate(&batch.observations)?;
    let features = before.features().clone();
    let scores = neuron_scores(before.actor_tape.hidden());
    let probs_before = before.probs();
    drop(before);

    let plan = MinibatchPlan {
        epochs: hyper.epochs,
        num_minibatches: hyper.num_minibatches,
        seed: plan_seed,
    };
    let sets = iterate_minibatches(batch.len(), &plan)?;
    let a = net.num_actions;
    let mut first_grad = Vec::new();
    let mut max_norm_seen = 0.0f64;
    let (mut sum_loss, mut sum_clip, mut sum_vf, mut sum_ent) = (0.0, 0.0, 0.0, 0.0);
    let mut epoch_ess = vec![0.0; hyper.epochs];

    for (k, idx) in sets.iter().enumerate() {
        let m = idx.len();
        let obs = batch.observations.select_rows(idx);
        let eval = net.evaluate(&obs)?;
        let actions: Vec<usize> = idx.iter().map(|&i| batch.actions[i]).collect();
        let new_lp: Vec<f64> = actions.iter().enumerate().map(|(r, &act)| eval.log_probs.get(r, act)).collect();
        let old_lp: Vec<f64> = idx.iter().map(|&i| batch.log_probs[i]).collect();
        let mut adv: Vec<f64> = idx.iter().map(|&i| batch.advantages[i]).collect();
        if hyper.normalize_advantages {
            normalize(&mut adv);
        }
        let rets: Vec<f64> = idx.iter().map(|&i| batch.returns[i]).collect();
        let ent: Vec<f64> = (0..m).map(|r| eval.entropy(r)).collect();
        let loss = ppo_loss(&new_lp, &old_lp, &adv, &eval.values, &rets, &ent, hyper)?;
        epoch_ess[k / hyper.num_minibatches] += ess_percent(&new_lp, &old_lp)? / hyper.num_minibatches as f64;

        let mf = m as f64;
        let mut d_logits = Matrix::zeros(m, a);
        let mut d_values = vec![0.0; m];
        for r in 0..m {
            let ratio = loss.ratios[r];
            let unclipped = ratio * adv[r];
            let active = unclipped <= clipped_surrogate(ratio, adv[r], hyper.clip_eps);
            let d_lp = if active { -unclipped / mf } else { 0.0 };
            let lp_row = eval.log_probs.row(r);
            let h = ent[r];
            let row = d_logits.row_mut(r);
            for j in 0..a {
                let p = lp_row[j].exp();
                let onehot = if j == actions[r] { 1.0 } else { 0.0 };
                // dH/dlogit_j = -p_j (log p_j + H)
                let d_ent = -p * (lp_row[j] + h);
                row[j] = d_lp * (onehot - p) - hyper.c2 / mf * d_ent;
            }
            d_values[r] = hyper.c1 * 2.0 * (eval.values[r] - rets[r]) / mf;
        }
        let mut grad = net.backward(&eval, &d_logits, &d_values)?;
        max_norm_seen = max_norm_seen.max(clip_grad_norm(&mut grad, hyper.max_grad_norm));
        if k == 0 {
            first_grad = grad.clone();
        }
        opt.step_chunks(&mut net.param_chunks_mut(), &grad)?;

        sum_loss += loss.total;
        sum_clip += loss.clip_term;
        sum_vf += loss.vf_term;
        sum_ent += loss.ent_term;
    }

    let after = net.evaluate(&batch.observations)?;
    let log_probs_after = (0..batch.len()).map(|i| after.log_probs.get(i, batch.actions[i])).collect();
    let steps = sets.len() as f64;
    Ok(UpdateStats {
        adam_steps: sets.len(),
        mean_loss: sum_loss / steps,
        mean_clip_term: sum_clip / steps,
        mean_vf_term: sum_vf / steps,
        mean_entropy: sum_ent / steps,
        first_grad,
        max_grad_norm_seen: max_norm_seen,
        probs_before,
        probs_after: after.probs(),
        log_probs_after,
        epoch_ess,
        features,
        neuron_scores: scores,
    })
}
