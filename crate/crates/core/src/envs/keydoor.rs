use std::collections::VecDeque;
use std::sync::OnceLock;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{MdpSpec, Task, Transition};

pub const GRID_SIZE: usize = 7;
pub const GRID_HORIZON: usize = 80;
const CELLS: usize = GRID_SIZE * GRID_SIZE;
const WALL_COL: usize = 3;
const GAP_ROW: usize = 3;
const KEY: (usize, usize) = (1, 1);
const DOOR: (usize, usize) = (6, 2);

// up, down, left, right as (dx, dy)
const MOVES: [(isize, isize); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];

fn index(x: usize, y: usize) -> usize {
    y * GRID_SIZE + x
}

fn is_wall(x: usize, y: usize) -> bool {
    x == WALL_COL && y != GAP_ROW
}

fn neighbor(pos: usize, action: usize) -> usize {
    let (x, y) = (pos % GRID_SIZE, pos / GRID_SIZE);
    let (dx, dy) = MOVES[action];
    let nx = x as isize + dx;
    let ny = y as isize + dy;
    if nx < 0 || ny < 0 || nx >= GRID_SIZE as isize || ny >= GRID_SIZE as isize {
        return pos;
    }
    let (nx, ny) = (nx as usize, ny as usize);
    if is_wall(nx, ny) {
        pos
    } else {
        index(nx, ny)
    }
}

/// Cells an episode may start in: not a wall, not the key, not the door.
pub fn start_cells() -> &'static [usize] {
    static CELLS_CACHE: OnceLock<Vec<usize>> = OnceLock::new();
    CELLS_CACHE.get_or_init(|| {
        (0..CELLS)
            .filter(|&c| {
                let (x, y) = (c % GRID_SIZE, c / GRID_SIZE);
                !is_wall(x, y) && c != index(KEY.0, KEY.1) && c != index(DOOR.0, DOOR.1)
            })
            .collect()
    })
}

/// 7×7 room split by a wall with a single gap. The agent must step on the key,
/// then on the door; that pays +1 and ends the episode. No other rewards.
///
/// Observation: one-hot position (49) followed by the key flag.
#[derive(Debug, Clone, Default)]
pub struct KeyDoorGrid {
    pub(crate) pos: usize,
    pub(crate) has_key: bool,
}

impl KeyDoorGrid {
    pub const MDP: MdpSpec = MdpSpec {
        observation_dim: CELLS + 1,
        num_actions: 4,
        reward_min: 0.0,
        reward_max: 1.0,
        gamma_default: 0.99,
        horizon: GRID_HORIZON,
    };

    pub fn position(&self) -> usize {
        self.pos
    }
}

impl Task for KeyDoorGrid {
    fn reset(&mut self, rng: &mut ChaCha8Rng) {
        let cells = start_cells();
        self.pos = cells[rng.gen_range(0..cells.len())];
        self.has_key = false;
    }

    fn step(&mut self, action: usize, _rng: &mut ChaCha8Rng) -> Transition {
        self.pos = neighbor(self.pos, action);
        if self.pos == index(KEY.0, KEY.1) {
            self.has_key = true;
        }
        if self.has_key && self.pos == index(DOOR.0, DOOR.1) {
            Transition {
                reward: 1.0,
                terminal: true,
            }
        } else {
            Transition {
                reward: 0.0,
                terminal: false,
            }
        }
    }

    fn write_obs(&self, _steps: usize, out: &mut [f64]) {
        out.fill(0.0);
        out[self.pos] = 1.0;
        out[CELLS] = if self.has_key { 1.0 } else { 0.0 };
    }
}

fn distances_to(target: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; CELLS];
    dist[target] = 0;
    let mut queue = VecDeque::from([target]);
    while let Some(c) = queue.pop_front() {
        // moves are symmetric, so BFS from the target gives distances to it
        for a in 0..4 {
            let n = neighbor(c, a);
            if dist[n] == usize::MAX {
                dist[n] = dist[c] + 1;
                queue.push_back(n);
            }
        }
    }
    dist
}

fn distance_tables() -> &'static (Vec<usize>, Vec<usize>) {
    static TABLES: OnceLock<(Vec<usize>, Vec<usize>)> = OnceLock::new();
    TABLES.get_or_init(|| (distances_to(index(KEY.0, KEY.1)), distances_to(index(DOOR.0, DOOR.1))))
}

/// Greedy step along a shortest path to the key, then to the door.
pub(super) fn optimal_action(obs: &[f64]) -> usize {
    let pos = obs[..CELLS].iter().position(|&v| v == 1.0).unwrap_or(0);
    let has_key = obs[CELLS] > 0.5;
    let (to_key, to_door) = distance_tables();
    let dist = if has_key { to_door } else { to_key };
    (0..4).min_by_key(|&a| dist[neighbor(pos, a)]).unwrap_or(0)
}
