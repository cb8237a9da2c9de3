use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{MdpSpec, Task, Transition};

pub const BANDIT_CONTEXTS: usize = 8;
pub const BANDIT_ARMS: usize = 4;
pub const BANDIT_NOISE_STD: f64 = 0.2;
const TABLE_SEED: u64 = 0x5EED_BA4D_17;
const REWARD_MIN: f64 = -1.0;
const REWARD_MAX: f64 = 2.0;

/// Arm means in `[0, 1)`, one row per context. The table is a fixed part of the task
/// (same for every run seed) so that per-env reference scores are well defined.
pub fn arm_means() -> [[f64; BANDIT_ARMS]; BANDIT_CONTEXTS] {
    let mut rng = ChaCha8Rng::seed_from_u64(TABLE_SEED);
    let mut table = [[0.0; BANDIT_ARMS]; BANDIT_CONTEXTS];
    for row in table.iter_mut() {
        for m in row.iter_mut() {
            *m = rng.gen::<f64>();
        }
    }
    table
}

/// One-step contextual bandit: observe a uniformly drawn context, pull an arm,
/// receive `mean[context][arm] + N(0, 0.2²)` clipped to `[-1, 2]`.
#[derive(Debug, Clone)]
pub struct NoisyBandit {
    means: [[f64; BANDIT_ARMS]; BANDIT_CONTEXTS],
    pub(crate) context: usize,
}

impl NoisyBandit {
    pub const MDP: MdpSpec = MdpSpec {
        observation_dim: BANDIT_CONTEXTS,
        num_actions: BANDIT_ARMS,
        reward_min: REWARD_MIN,
        reward_max: REWARD_MAX,
        gamma_default: 0.99,
        horizon: 1,
    };

    pub fn new() -> Self {
        Self {
            means: arm_means(),
            context: 0,
        }
    }
}

impl Default for NoisyBandit {
    fn default() -> Self {
        Self::new()
    }
}

impl Task for NoisyBandit {
    fn reset(&mut self, rng: &mut ChaCha8Rng) {
        self.context = rng.gen_range(0..BANDIT_CONTEXTS);
    }

    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> Transition {
        let noise: f64 = rng.sample(StandardNormal);
        let reward = (self.means[self.context][action] + BANDIT_NOISE_STD * noise).clamp(REWARD_MIN, REWARD_MAX);
        Transition { reward, terminal: true }
    }

    fn write_obs(&self, _steps: usize, out: &mut [f64]) {
        out.fill(0.0);
        out[self.context] = 1.0;
    }
}

pub(super) fn optimal_action(obs: &[f64]) -> usize {
    let context = obs.iter().position(|&v| v == 1.0).unwrap_or(0);
    let row = arm_means()[context];
    (0..BANDIT_ARMS).fold(0, |best, a| if row[a] > row[best] { a } else { best })
}
