//! Transitive-inference analog: a hidden value chain of colored objects is
//! taught through scrambled adjacent pairs; the agent advances by stepping
//! onto the higher-valued object of the presented pair and is finally
//! tested on the pair (second-from-left, second-from-right), which never
//! appeared together during the demo phase. Demo trials repeat until
//! answered correctly; the challenge is single-shot.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::grid::{GridWorld, Heading, GRID_ACTIONS, WINDOW_SIDE};
use super::{episode_rng, stimulus_permutation, stimulus_pool_size, Env, StepResult, TaskSpec};
use crate::controller::ObsSpec;
use crate::error::{Error, Result};

const ROOM: usize = 5;
const LEFT_CELL: (usize, usize) = (1, 1);
const RIGHT_CELL: (usize, usize) = (1, 3);
const SPAWN: (usize, usize) = (3, 2);
const COLOR_CHANNELS: usize = 20;

struct Trial {
    /// Chain indices shown on the left and right cells.
    left: usize,
    right: usize,
    challenge: bool,
}

pub struct TransitiveInferenceEnv {
    spec: TaskSpec,
    color_perm: Vec<usize>,
    episode: u64,
    world: GridWorld,
    /// chain[i] = color id of the i-th lowest-valued object.
    chain: Vec<usize>,
    trials: Vec<Trial>,
    trial: usize,
    steps: usize,
    horizon: usize,
    done: bool,
}

impl TransitiveInferenceEnv {
    pub fn new(spec: TaskSpec) -> Self {
        let color_perm =
            stimulus_permutation(spec.family, spec.seed, stimulus_pool_size(spec.family));
        TransitiveInferenceEnv {
            spec,
            color_perm,
            episode: 0,
            world: GridWorld::open(ROOM, ROOM),
            chain: Vec::new(),
            trials: Vec::new(),
            trial: 0,
            steps: 0,
            horizon: 0,
            done: true,
        }
    }

    fn reset_agent(&mut self) {
        self.world.agent = SPAWN;
        self.world.heading = Heading::North;
    }

    fn observation(&self) -> Vec<f64> {
        let chans = 1 + COLOR_CHANNELS;
        let (left_color, right_color, challenge) = if self.trial < self.trials.len() {
            let t = &self.trials[self.trial];
            (
                Some(self.chain[t.left]),
                Some(self.chain[t.right]),
                t.challenge,
            )
        } else {
            (None, None, false)
        };
        let perm = &self.color_perm;
        let mut obs = self.world.render_window(chans, |y, x, cell| {
            let color = if (y, x) == LEFT_CELL {
                left_color
            } else if (y, x) == RIGHT_CELL {
                right_color
            } else {
                None
            };
            if let Some(c) = color {
                cell[1 + perm[c]] = 1.0;
            }
        });
        obs.extend(self.world.agent_features());
        obs.extend_from_slice(if challenge { &[0.0, 1.0] } else { &[1.0, 0.0] });
        obs
    }
}

impl Env for TransitiveInferenceEnv {
    fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    fn obs_spec(&self) -> ObsSpec {
        ObsSpec::Grid {
            height: WINDOW_SIDE,
            width: WINDOW_SIDE,
            channels: 1 + COLOR_CHANNELS,
            extra: 6 + 2,
        }
    }

    fn num_actions(&self) -> usize {
        GRID_ACTIONS
    }

    fn reset(&mut self) -> Vec<f64> {
        let mut rng = episode_rng(&self.spec, self.episode);
        self.episode += 1;
        let len =
            self.spec.scale_options[rng.random_range(0..self.spec.scale_options.len())] as usize;
        let mut pool = self.spec.stimulus_pool.clone();
        pool.shuffle(&mut rng);
        self.chain = pool.into_iter().take(len).collect();

        let mut adjacent: Vec<(usize, usize)> = (0..len - 1).map(|i| (i, i + 1)).collect();
        adjacent.shuffle(&mut rng);
        let mut trials: Vec<Trial> = adjacent
            .into_iter()
            .map(|(lo, hi)| {
                let flip = rng.random_bool(0.5);
                Trial {
                    left: if flip { hi } else { lo },
                    right: if flip { lo } else { hi },
                    challenge: false,
                }
            })
            .collect();
        let flip = rng.random_bool(0.5);
        let (lo, hi) = (1, len - 2);
        trials.push(Trial {
            left: if flip { hi } else { lo },
            right: if flip { lo } else { hi },
            challenge: true,
        });
        self.trials = trials;
        self.trial = 0;
        self.world = GridWorld::open(ROOM, ROOM);
        self.reset_agent();
        self.steps = 0;
        // Scripted solve: ~4 actions per trial, 10x slack, retried demo
        // trials included.
        self.horizon = 40 * len;
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
        let pos = self.world.agent;
        if pos == LEFT_CELL || pos == RIGHT_CELL {
            let t = &self.trials[self.trial];
            let picked = if pos == LEFT_CELL { t.left } else { t.right };
            let other = if pos == LEFT_CELL { t.right } else { t.left };
            let correct = picked > other;
            if correct {
                reward = 1.0;
            }
            if correct || t.challenge {
                self.trial += 1;
                if self.trial >= self.trials.len() {
                    self.done = true;
                }
            }
            // Wrong demo picks re-present the same pair.
            self.reset_agent();
        }
        if self.steps >= self.horizon {
            self.done = true;
        }
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.done,
            info: BTreeMap::from([
                ("trial".to_string(), self.trial as f64),
                ("steps".to_string(), self.steps as f64),
            ]),
        })
    }

    fn oracle_action(&mut self) -> usize {
        let t = &self.trials[self.trial];
        let target = if t.left > t.right {
            LEFT_CELL
        } else {
            RIGHT_CELL
        };
        match self
            .world
            .shortest_action_path(self.world.agent, self.world.heading, &[target])
        {
            Some(path) if !path.is_empty() => path[0],
            _ => super::grid::ACT_TURN_L,
        }
    }

    fn max_reward(&self) -> f64 {
        self.trials.len() as f64
    }
}
