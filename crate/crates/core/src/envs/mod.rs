//! Seedable, auto-resetting vectorized environments.
//!
//! Three small tasks stand in for pixel benchmarks:
//! - [`EnvName::ChainWalk`]: a 20-cell corridor with a sparse goal at the far end.
//! - [`EnvName::KeyDoorGrid`]: a 7×7 room split by a wall; fetch the key, then open the door.
//! - [`EnvName::NoisyBandit`]: one-step contextual bandit with Gaussian reward noise.
//!
//! Every sub-environment owns a ChaCha stream selected by its index, so adding
//! environments never changes the trajectories of the existing ones.

mod bandit;
mod chain;
mod keydoor;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub use bandit::{arm_means, NoisyBandit, BANDIT_ARMS, BANDIT_CONTEXTS, BANDIT_NOISE_STD};
pub use chain::{ChainWalk, CHAIN_HORIZON, CHAIN_LENGTH};
pub use keydoor::{start_cells, KeyDoorGrid, GRID_HORIZON, GRID_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    ChainWalk,
    KeyDoorGrid,
    NoisyBandit,
}

impl EnvName {
    pub const ALL: [EnvName; 3] = [EnvName::ChainWalk, EnvName::KeyDoorGrid, EnvName::NoisyBandit];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::ChainWalk => "chain_walk",
            EnvName::KeyDoorGrid => "key_door_grid",
            EnvName::NoisyBandit => "noisy_bandit",
        }
    }

    pub fn mdp(self) -> MdpSpec {
        match self {
            EnvName::ChainWalk => ChainWalk::MDP,
            EnvName::KeyDoorGrid => KeyDoorGrid::MDP,
            EnvName::NoisyBandit => NoisyBandit::MDP,
        }
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "chain_walk" | "chainwalk" => Ok(EnvName::ChainWalk),
            "key_door_grid" | "keydoorgrid" => Ok(EnvName::KeyDoorGrid),
            "noisy_bandit" | "noisybandit" => Ok(EnvName::NoisyBandit),
            _ => Err(Error::UnknownEnv(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    pub observation_dim: usize,
    pub num_actions: usize,
    pub reward_min: f64,
    pub reward_max: f64,
    pub gamma_default: f64,
    pub horizon: usize,
}

/// Outcome of one environment transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub reward: f64,
    /// The task reached a terminal state.
    pub terminal: bool,
}

/// One single-instance task. `step` never resets; [`VecEnv`] handles that.
pub(crate) trait Task: Clone + Send {
    fn reset(&mut self, rng: &mut ChaCha8Rng);
    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> Transition;
    fn write_obs(&self, steps: usize, out: &mut [f64]);
}

#[derive(Debug, Clone)]
enum AnyTask {
    Chain(ChainWalk),
    KeyDoor(KeyDoorGrid),
    Bandit(NoisyBandit),
}

impl AnyTask {
    fn reset(&mut self, rng: &mut ChaCha8Rng) {
        match self {
            AnyTask::Chain(t) => t.reset(rng),
            AnyTask::KeyDoor(t) => t.reset(rng),
            AnyTask::Bandit(t) => t.reset(rng),
        }
    }

    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> Transition {
        match self {
            AnyTask::Chain(t) => t.step(action, rng),
            AnyTask::KeyDoor(t) => t.step(action, rng),
            AnyTask::Bandit(t) => t.step(action, rng),
        }
    }

    fn write_obs(&self, steps: usize, out: &mut [f64]) {
        match self {
            AnyTask::Chain(t) => t.write_obs(steps, out),
            AnyTask::KeyDoor(t) => t.write_obs(steps, out),
            AnyTask::Bandit(t) => t.write_obs(steps, out),
        }
    }
}

#[derive(Debug, Clone)]
struct SubEnv {
    task: AnyTask,
    rng: ChaCha8Rng,
    steps: usize,
    episode_return: f64,
}

/// Result of stepping every sub-environment once.
#[derive(Debug, Clone)]
pub struct StepResult {
    /// Observations after the step; rows of finished envs hold the post-reset observation.
    pub observations: Matrix,
    pub rewards: Vec<f64>,
    /// Episode ended (terminal or horizon reached).
    pub dones: Vec<bool>,
    /// Episode ended in a true terminal state (subset of `dones`).
    pub terminals: Vec<bool>,
    /// Pre-reset observation for each finished env.
    pub final_observations: Vec<Option<Vec<f64>>>,
    /// Undiscounted return of each episode that finished on this step.
    pub episodic_returns: Vec<Option<f64>>,
}

/// `n_envs` independent copies of one task, stepped in lockstep.
#[derive(Debug, Clone)]
pub struct VecEnv {
    name: EnvName,
    mdp: MdpSpec,
    envs: Vec<SubEnv>,
}

/// Creates `n_envs` reset sub-environments; env `i` draws from stream `i` of `seed`.
pub fn make_env(name: EnvName, n_envs: usize, seed: u64) -> Result<VecEnv> {
    if n_envs == 0 {
        return Err(Error::InvalidArgument("n_envs must be >= 1".into()));
    }
    let proto = match name {
        EnvName::ChainWalk => AnyTask::Chain(ChainWalk::default()),
        EnvName::KeyDoorGrid => AnyTask::KeyDoor(KeyDoorGrid::default()),
        EnvName::NoisyBandit => AnyTask::Bandit(NoisyBandit::new()),
    };
    let envs = (0..n_envs)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut task = proto.clone();
            task.reset(&mut rng);
            SubEnv {
                task,
                rng,
                steps: 0,
                episode_return: 0.0,
            }
        })
        .collect();
    Ok(VecEnv {
        name,
        mdp: name.mdp(),
        envs,
    })
}

impl VecEnv {
    pub fn name(&self) -> EnvName {
        self.name
    }

    pub fn mdp(&self) -> &MdpSpec {
        &self.mdp
    }

    pub fn n_envs(&self) -> usize {
        self.envs.len()
    }

    pub fn observations(&self) -> Matrix {
        let d = self.mdp.observation_dim;
        let mut m = Matrix::zeros(self.envs.len(), d);
        for (i, e) in self.envs.iter().enumerate() {
            e.task.write_obs(e.steps, m.row_mut(i));
        }
        m
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        let n = self.envs.len();
        if actions.len() != n {
            return Err(Error::dim("VecEnv::step actions", n, actions.len()));
        }
        if let Some((i, &a)) = actions.iter().enumerate().find(|(_, &a)| a >= self.mdp.num_actions) {
            return Err(Error::ActionOutOfRange {
                env_index: i,
                action: a,
                num_actions: self.mdp.num_actions,
            });
        }
        let d = self.mdp.observation_dim;
        let mut result = StepResult {
            observations: Matrix::zeros(n, d),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            terminals: Vec::with_capacity(n),
            final_observations: Vec::with_capacity(n),
            episodic_returns: Vec::with_capacity(n),
        };
        for (i, (env, &a)) in self.envs.iter_mut().zip(actions).enumerate() {
            let tr = env.task.step(a, &mut env.rng);
            env.steps += 1;
            env.episode_return += tr.reward;
            let done = tr.terminal || env.steps >= self.mdp.horizon;
            result.rewards.push(tr.reward);
            result.dones.push(done);
            result.terminals.push(tr.terminal);
            if done {
                let mut fin = vec![0.0; d];
                env.task.write_obs(env.steps, &mut fin);
                result.final_observations.push(Some(fin));
                result.episodic_returns.push(Some(env.episode_return));
                env.task.reset(&mut env.rng);
                env.steps = 0;
                env.episode_return = 0.0;
            } else {
                result.final_observations.push(None);
                result.episodic_returns.push(None);
            }
            env.task.write_obs(env.steps, result.observations.row_mut(i));
        }
        Ok(result)
    }
}

/// Hand-coded optimal action for a single observation (used for reference scores).
pub fn optimal_action(name: EnvName, obs: &[f64]) -> usize {
    match name {
        EnvName::ChainWalk => chain::optimal_action(obs),
        EnvName::KeyDoorGrid => keydoor::optimal_action(obs),
        EnvName::NoisyBandit => bandit::optimal_action(obs),
    }
}
