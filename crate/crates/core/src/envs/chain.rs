use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{MdpSpec, Task, Transition};

pub const CHAIN_LENGTH: usize = 20;
pub const CHAIN_HORIZON: usize = 60;
const START_CELLS: usize = 5;
const STEP_COST: f64 = -0.01;
const GOAL_REWARD: f64 = 1.0;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// Deterministic corridor. Reaching the last cell pays +1 and ends the episode,
/// every other step costs 0.01.
///
/// Observation: one-hot cell followed by `steps / horizon`.
#[derive(Debug, Clone, Default)]
pub struct ChainWalk {
    pub(crate) cell: usize,
}

impl ChainWalk {
    pub const MDP: MdpSpec = MdpSpec {
        observation_dim: CHAIN_LENGTH + 1,
        num_actions: 2,
        reward_min: STEP_COST,
        reward_max: GOAL_REWARD,
        gamma_default: 0.99,
        horizon: CHAIN_HORIZON,
    };

    pub fn cell(&self) -> usize {
        self.cell
    }
}

impl Task for ChainWalk {
    fn reset(&mut self, rng: &mut ChaCha8Rng) {
        self.cell = rng.gen_range(0..START_CELLS);
    }

    fn step(&mut self, action: usize, _rng: &mut ChaCha8Rng) -> Transition {
        self.cell = match action {
            LEFT => self.cell.saturating_sub(1),
            _ => (self.cell + 1).min(CHAIN_LENGTH - 1),
        };
        if self.cell == CHAIN_LENGTH - 1 {
            Transition {
                reward: GOAL_REWARD,
                terminal: true,
            }
        } else {
            Transition {
                reward: STEP_COST,
                terminal: false,
            }
        }
    }

    fn write_obs(&self, steps: usize, out: &mut [f64]) {
        out.fill(0.0);
        out[self.cell] = 1.0;
        out[CHAIN_LENGTH] = steps as f64 / CHAIN_HORIZON as f64;
    }
}

pub(super) fn optimal_action(_obs: &[f64]) -> usize {
    RIGHT
}
