//! Per-environment reference scores used to normalize returns.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{make_env, optimal_action, EnvName};

pub const REFERENCE_EPISODES: usize = 1000;
const REFERENCE_SEED: u64 = 0x5eed_0f_5c0e;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceScores {
    /// Mean return of the uniform random policy.
    pub random: f64,
    /// Mean return of the hand-coded optimal policy.
    pub optimal: f64,
}

/// Mean return over the first episode of each of `REFERENCE_EPISODES` envs.
fn mean_first_episode(env: EnvName, policy: &mut dyn FnMut(&[f64]) -> usize) -> f64 {
    let mut venv = make_env(env, REFERENCE_EPISODES, REFERENCE_SEED).expect("non-empty env");
    let mut first: Vec<Option<f64>> = vec![None; REFERENCE_EPISODES];
    let mut obs = venv.observations();
    while first.iter().any(Option::is_none) {
        let actions: Vec<usize> = (0..REFERENCE_EPISODES).map(|i| policy(obs.row(i))).collect();
        let step = venv.step(&actions).expect("valid actions");
        for (slot, ret) in first.iter_mut().zip(&step.episodic_returns) {
            if slot.is_none() {
                *slot = *ret;
            }
        }
        obs = step.observations;
    }
    first.iter().map(|r| r.unwrap()).sum::<f64>() / REFERENCE_EPISODES as f64
}

fn compute(env: EnvName) -> ReferenceScores {
    let num_actions = env.mdp().num_actions;
    let mut rng = ChaCha8Rng::seed_from_u64(REFERENCE_SEED);
    let random = mean_first_episode(env, &mut |_| rng.gen_range(0..num_actions));
    let optimal = mean_first_episode(env, &mut |o| optimal_action(env, o));
    ReferenceScores { random, optimal }
}

/// Reference scores, computed once per process and cached.
pub fn reference_scores(env: EnvName) -> ReferenceScores {
    static CACHE: [OnceLock<ReferenceScores>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let slot = EnvName::ALL.iter().position(|&e| e == env).expect("known env");
    *CACHE[slot].get_or_init(|| compute(env))
}
