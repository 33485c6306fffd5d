//! Spot-the-difference analogs: two rooms joined by a delay corridor, with
//! one block altered between them.
//!
//! Basic: two colored blocks per room at random cells. Passive: room 1's
//! blocks flank the corridor entrance so the agent must see them on the
//! way through. Multi-object: the object count is the scale dimension.
//! Motion: blocks trace 8-step loops and the altered block follows a
//! different pattern instead of a different color.
//!
//! Reward is +1 for stepping onto the altered block in room 2; touching
//! any room-2 block ends the episode.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::grid::{GridWorld, Heading, GRID_ACTIONS, WINDOW_SIDE};
use super::{
    episode_rng, motion_pattern_pool, stimulus_permutation, stimulus_pool_size, Env, Family,
    StepResult, TaskSpec,
};
use crate::controller::ObsSpec;
use crate::error::{Error, Result};

const ROOM_ROWS: usize = 3;
const ROOM_COLS: usize = 5;
const COLOR_CHANNELS: usize = 10;

/// 8-step movement loops (dy, dx offsets from the block's base cell).
/// The first six are the training patterns, the rest the holdout ones;
/// pattern 6 is the no-motion hold.
const MOTION_PATTERNS: [[(i32, i32); 8]; 12] = [
    // ring walked clockwise
    [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)],
    // corner-to-corner box
    [(-1, -1), (-1, 1), (1, 1), (1, -1), (-1, -1), (-1, 1), (1, 1), (1, -1)],
    // five-point hops with a pause
    [(0, 0), (-1, 0), (1, 1), (0, -1), (-1, 1), (1, 0), (0, 1), (1, -1)],
    // hexagon-ish sweep
    [(-1, 0), (0, 1), (1, 1), (1, 0), (0, -1), (-1, -1), (-1, 0), (0, 0)],
    // linear along x
    [(0, -1), (0, 0), (0, 1), (0, 1), (0, 1), (0, 0), (0, -1), (0, -1)],
    // diagonal y = x
    [(-1, -1), (0, 0), (1, 1), (1, 1), (1, 1), (0, 0), (-1, -1), (-1, -1)],
    // hold still
    [(0, 0); 8],
    // triangle
    [(-1, 0), (-1, 0), (1, -1), (1, -1), (0, 1), (0, 1), (-1, 0), (1, -1)],
    // pentagon-ish sweep
    [(-1, 0), (-1, 1), (1, 1), (1, 0), (0, -1), (-1, -1), (0, 0), (1, 0)],
    // figure eight
    [(-1, -1), (-1, 0), (0, 0), (1, 1), (1, 0), (0, 0), (-1, 1), (1, -1)],
    // linear along y
    [(-1, 0), (0, 0), (1, 0), (1, 0), (1, 0), (0, 0), (-1, 0), (-1, 0)],
    // diagonal y = -x
    [(-1, 1), (0, 0), (1, -1), (1, -1), (1, -1), (0, 0), (-1, 1), (-1, 1)],
];

#[derive(Debug, Clone)]
struct Block {
    base: (usize, usize),
    color: usize,
    /// Motion variant only; None means static.
    pattern: Option<usize>,
}

impl Block {
    fn cell_at(&self, tick: u64) -> (usize, usize) {
        match self.pattern {
            None => self.base,
            Some(p) => {
                let (dy, dx) = MOTION_PATTERNS[p][(tick % 8) as usize];
                (
                    (self.base.0 as i32 + dy) as usize,
                    (self.base.1 as i32 + dx) as usize,
                )
            }
        }
    }
}

pub struct SpotDiffEnv {
    spec: TaskSpec,
    color_perm: Vec<usize>,
    episode: u64,
    world: GridWorld,
    room1: Vec<Block>,
    room2: Vec<Block>,
    altered: usize,
    corridor_len: usize,
    tick: u64,
    steps: usize,
    horizon: usize,
    done: bool,
    room2_top: usize,
}

impl SpotDiffEnv {
    pub fn new(spec: TaskSpec) -> Self {
        let color_perm =
            stimulus_permutation(spec.family, spec.seed, stimulus_pool_size(spec.family));
        SpotDiffEnv {
            spec,
            color_perm,
            episode: 0,
            world: GridWorld::open(1, 1),
            room1: Vec::new(),
            room2: Vec::new(),
            altered: 0,
            corridor_len: 1,
            tick: 0,
            steps: 0,
            horizon: 0,
            done: true,
            room2_top: 0,
        }
    }

    fn channels(&self) -> usize {
        1 + COLOR_CHANNELS
    }

    fn extra_dim(&self) -> usize {
        6 + 3 // pos/heading + region one-hot
    }

    fn entry_col() -> usize {
        1 + ROOM_COLS / 2
    }

    fn observation(&self) -> Vec<f64> {
        let chans = self.channels();
        let tick = self.tick;
        let mut cells: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for b in self.room1.iter().chain(self.room2.iter()) {
            cells.insert(b.cell_at(tick), b.color);
        }
        let perm = &self.color_perm;
        let mut obs = self.world.render_window(chans, |y, x, cell| {
            if let Some(&color) = cells.get(&(y, x)) {
                cell[1 + perm[color]] = 1.0;
            }
        });
        obs.extend(self.world.agent_features());
        let row = self.world.agent.0;
        let region = if row < 1 + ROOM_ROWS {
            0
        } else if row < 1 + ROOM_ROWS + self.corridor_len {
            1
        } else {
            2
        };
        let mut flags = [0.0; 3];
        flags[region] = 1.0;
        obs.extend_from_slice(&flags);
        obs
    }

    fn room_cells(top: usize) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for r in 0..ROOM_ROWS {
            for c in 0..ROOM_COLS {
                v.push((top + r, 1 + c));
            }
        }
        v
    }

    fn object_count(&self, rng: &mut ChaCha8Rng) -> usize {
        match self.spec.family {
            Family::SpotDiffMultiObject => {
                let opts = &self.spec.scale_options;
                opts[rng.random_range(0..opts.len())] as usize
            }
            _ => 2,
        }
    }

    fn altered_block_cell(&self) -> (usize, usize) {
        self.room2[self.altered].cell_at(self.tick)
    }
}

impl Env for SpotDiffEnv {
    fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    fn obs_spec(&self) -> ObsSpec {
        ObsSpec::Grid {
            height: WINDOW_SIDE,
            width: WINDOW_SIDE,
            channels: self.channels(),
            extra: self.extra_dim(),
        }
    }

    fn num_actions(&self) -> usize {
        GRID_ACTIONS
    }

    fn reset(&mut self) -> Vec<f64> {
        let mut rng = episode_rng(&self.spec, self.episode);
        self.episode += 1;
        let delay = self.spec.scale_options[rng.random_range(0..self.spec.scale_options.len())];
        let motion = self.spec.family == Family::SpotDiffMotion;
        self.corridor_len = (delay as usize).max(1);
        let width = 2 + ROOM_COLS;
        let height = 2 + 2 * ROOM_ROWS + self.corridor_len;
        let mut world = GridWorld::solid(height, width);
        // Carve the two rooms and the center corridor.
        for (y, x) in Self::room_cells(1) {
            world.set_wall(y, x, false);
        }
        self.room2_top = 1 + ROOM_ROWS + self.corridor_len;
        for (y, x) in Self::room_cells(self.room2_top) {
            world.set_wall(y, x, false);
        }
        for i in 0..self.corridor_len {
            world.set_wall(1 + ROOM_ROWS + i, Self::entry_col(), false);
        }
        world.agent = (1, Self::entry_col());
        world.heading = Heading::South;
        self.world = world;

        let count = self.object_count(&mut rng);
        // Bases for moving blocks stay one cell inside the room so their
        // loops never leave it.
        let mut candidates: Vec<(usize, usize)> = if motion {
            (0..ROOM_COLS - 2)
                .map(|c| (1 + ROOM_ROWS / 2, 2 + c))
                .collect()
        } else {
            Self::room_cells(1)
                .into_iter()
                .filter(|&(y, x)| (y, x) != self.world.agent && !(y == ROOM_ROWS && x == Self::entry_col()))
                .collect()
        };
        candidates.shuffle(&mut rng);
        let placements: Vec<(usize, usize)> = match self.spec.family {
            Family::SpotDiffPassive => {
                // Flank the corridor entrance; guaranteed visible.
                vec![
                    (ROOM_ROWS, Self::entry_col() - 1),
                    (ROOM_ROWS, Self::entry_col() + 1),
                ]
            }
            _ => candidates.into_iter().take(count).collect(),
        };

        let pool = &self.spec.stimulus_pool;
        let mut colors: Vec<usize> = if motion {
            // Identity carried by color from the full set; patterns split.
            let mut all: Vec<usize> = (0..stimulus_pool_size(self.spec.family)).collect();
            all.shuffle(&mut rng);
            all
        } else {
            let mut p = pool.clone();
            p.shuffle(&mut rng);
            p
        };
        colors.truncate(placements.len());

        let patterns = motion_pattern_pool(self.spec.level);
        let shared_pattern = patterns[rng.random_range(0..patterns.len())];
        self.room1 = placements
            .iter()
            .zip(&colors)
            .map(|(&base, &color)| Block {
                base,
                color,
                pattern: motion.then_some(shared_pattern),
            })
            .collect();

        self.altered = rng.random_range(0..self.room1.len());
        let offset = self.room2_top - 1;
        self.room2 = self
            .room1
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let mut block = Block {
                    base: (b.base.0 + offset, b.base.1),
                    color: b.color,
                    pattern: b.pattern,
                };
                if i == self.altered {
                    if motion {
                        let mut alt = block.pattern.unwrap();
                        while alt == block.pattern.unwrap() {
                            alt = patterns[rng.random_range(0..patterns.len())];
                        }
                        block.pattern = Some(alt);
                    } else {
                        let mut alt = block.color;
                        while alt == block.color {
                            alt = pool[rng.random_range(0..pool.len())];
                        }
                        block.color = alt;
                    }
                }
                block
            })
            .collect();

        self.tick = 0;
        self.steps = 0;
        // 10x the scripted path: through the corridor plus room traversal
        // (and up to a loop's worth of waiting in the motion variant).
        let oracle_steps = self.corridor_len + 2 * (ROOM_ROWS + ROOM_COLS) + 8;
        self.horizon = 10 * oracle_steps;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        if action >= GRID_ACTIONS {
            return Err(Error::IndexOutOfRange {
                index: action,
                len: GRID_ACTIONS,
            });
        }
        if self.done {
            return Err(Error::contract("step on finished episode"));
        }
        self.world.apply_action(action);
        self.steps += 1;
        let mut reward = 0.0;
        // Contact is evaluated against block positions as the agent sees
        // them, before the blocks advance along their loops.
        for (i, b) in self.room2.iter().enumerate() {
            if b.cell_at(self.tick) == self.world.agent {
                reward = if i == self.altered { 1.0 } else { 0.0 };
                self.done = true;
                break;
            }
        }
        self.tick += 1;
        if self.steps >= self.horizon {
            self.done = true;
        }
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.done,
            info: BTreeMap::from([("steps".to_string(), self.steps as f64)]),
        })
    }

    fn oracle_action(&mut self) -> usize {
        let target = self.altered_block_cell();
        // Touching any other room-2 block ends the episode, so plan around
        // their current cells.
        let mut probe = self.world.clone();
        for (i, b) in self.room2.iter().enumerate() {
            if i != self.altered {
                let (y, x) = b.cell_at(self.tick);
                probe.set_wall(y, x, true);
            }
        }
        let plan = probe
            .shortest_action_path(self.world.agent, self.world.heading, &[target])
            .or_else(|| {
                self.world
                    .shortest_action_path(self.world.agent, self.world.heading, &[target])
            });
        match plan {
            Some(path) if !path.is_empty() => path[0],
            // Already on target or unreachable this tick: pivot in place and
            // let the loop bring the block around.
            _ => super::grid::ACT_TURN_L,
        }
    }

    fn max_reward(&self) -> f64 {
        1.0
    }
}
