//! Goal-navigation analogs: reach a fixed per-episode goal, get respawned,
//! find it again. Arena size is the scale dimension; the goal's spawn
//! region is the stimulus split (quadrant pairs, or maze halves). The
//! visible variants render the goal in its own observation channel; the
//! invisible variants omit that channel entirely.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::grid::{carve_perfect_maze, GridWorld, Heading, GRID_ACTIONS, WINDOW_SIDE};
use super::{episode_rng, Env, Family, StepResult, TaskSpec};
use crate::controller::ObsSpec;
use crate::error::{Error, Result};

pub struct GoalNavEnv {
    spec: TaskSpec,
    episode: u64,
    world: GridWorld,
    goal: (usize, usize),
    spawn_stream: Vec<((usize, usize), Heading)>,
    respawns: usize,
    steps: usize,
    horizon: usize,
    trial_start_step: usize,
    plan: Vec<usize>,
    plan_cursor: usize,
    done: bool,
}

impl GoalNavEnv {
    pub fn new(spec: TaskSpec) -> Self {
        GoalNavEnv {
            spec,
            episode: 0,
            world: GridWorld::open(1, 1),
            goal: (0, 0),
            spawn_stream: Vec::new(),
            respawns: 0,
            steps: 0,
            horizon: 0,
            trial_start_step: 0,
            plan: Vec::new(),
            plan_cursor: 0,
            done: true,
        }
    }

    fn goal_visible(&self) -> bool {
        matches!(
            self.spec.family,
            Family::VisibleGoalWithBuildings | Family::VisibleGoalProceduralMaze
        )
    }

    fn channels(&self) -> usize {
        if self.goal_visible() {
            2
        } else {
            1
        }
    }

    fn build_world(&self, arena: usize, rng: &mut ChaCha8Rng) -> GridWorld {
        match self.spec.family {
            Family::VisibleGoalProceduralMaze => carve_perfect_maze(arena, rng),
            Family::InvisibleGoalEmptyArena => GridWorld::open(arena, arena),
            _ => {
                // Two square buildings at fixed, non-randomized locations.
                let mut w = GridWorld::open(arena, arena);
                let side = (arena / 5).max(2);
                for &(oy, ox) in &[(arena / 5, arena / 5), (3 * arena / 5, 3 * arena / 5)] {
                    for y in oy..(oy + side).min(arena) {
                        for x in ox..(ox + side).min(arena) {
                            w.set_wall(y, x, true);
                        }
                    }
                }
                w
            }
        }
    }

    fn open_cells(world: &GridWorld) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for y in 0..world.height {
            for x in 0..world.width {
                if !world.is_wall(y, x) {
                    v.push((y, x));
                }
            }
        }
        v
    }

    fn goal_region_cells(&self, world: &GridWorld) -> Vec<(usize, usize)> {
        let a = world.height;
        let holdout = self.spec.level.is_holdout();
        Self::open_cells(world)
            .into_iter()
            .filter(|&(y, x)| {
                if self.spec.family == Family::VisibleGoalProceduralMaze {
                    // North half trains, south half is held out.
                    if holdout {
                        y >= a / 2
                    } else {
                        y < a / 2
                    }
                } else {
                    let north = y < a / 2;
                    let west = x < a / 2;
                    // Northwest+southeast train; the other two quadrants are
                    // held out.
                    if holdout {
                        north != west
                    } else {
                        north == west
                    }
                }
            })
            .collect()
    }

    fn observation(&self) -> Vec<f64> {
        let chans = self.channels();
        let goal = self.goal;
        let visible = self.goal_visible();
        let mut obs = self.world.render_window(chans, |y, x, cell| {
            if visible && (y, x) == goal {
                cell[1] = 1.0;
            }
        });
        obs.extend(self.world.agent_features());
        obs
    }

    fn respawn(&mut self) {
        let (pos, heading) = self.spawn_stream[self.respawns % self.spawn_stream.len()];
        self.respawns += 1;
        self.world.agent = pos;
        self.world.heading = heading;
        self.plan.clear();
        self.plan_cursor = 0;
    }
}

impl Env for GoalNavEnv {
    fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    fn obs_spec(&self) -> ObsSpec {
        ObsSpec::Grid {
            height: WINDOW_SIDE,
            width: WINDOW_SIDE,
            channels: self.channels(),
            extra: 6,
        }
    }

    fn num_actions(&self) -> usize {
        GRID_ACTIONS
    }

    fn reset(&mut self) -> Vec<f64> {
        let mut rng = episode_rng(&self.spec, self.episode);
        self.episode += 1;
        let arena =
            self.spec.scale_options[rng.random_range(0..self.spec.scale_options.len())] as usize;
        self.world = self.build_world(arena, &mut rng);
        let region = self.goal_region_cells(&self.world);
        self.goal = region[rng.random_range(0..region.len())];

        let open: Vec<(usize, usize)> = Self::open_cells(&self.world)
            .into_iter()
            .filter(|&c| c != self.goal)
            .collect();
        // Precomputed respawn stream keeps the episode layout a pure
        // function of (family, level, seed, episode index).
        self.spawn_stream = (0..64)
            .map(|_| {
                (
                    open[rng.random_range(0..open.len())],
                    Heading::ALL[rng.random_range(0..4)],
                )
            })
            .collect();
        self.respawns = 0;
        self.respawn();
        self.steps = 0;
        self.trial_start_step = 0;
        // Room for roughly ten shortest-path trials at 10x slack.
        self.horizon = 20 * arena;
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
        let mut info = BTreeMap::new();
        if self.world.agent == self.goal {
            reward = 1.0;
            info.insert(
                "time_to_goal".to_string(),
                (self.steps - self.trial_start_step) as f64,
            );
            info.insert("trial".to_string(), self.respawns as f64);
            self.trial_start_step = self.steps;
            self.respawn();
        }
        if self.steps >= self.horizon {
            self.done = true;
        }
        info.insert("steps".to_string(), self.steps as f64);
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.done,
            info,
        })
    }

    fn oracle_action(&mut self) -> usize {
        if self.plan_cursor >= self.plan.len() {
            self.plan = self
                .world
                .shortest_action_path(self.world.agent, self.world.heading, &[self.goal])
                .unwrap_or_default();
            self.plan_cursor = 0;
        }
        match self.plan.get(self.plan_cursor) {
            Some(&a) => {
                self.plan_cursor += 1;
                a
            }
            None => super::grid::ACT_TURN_L,
        }
    }

    fn max_reward(&self) -> f64 {
        // Greedy replay of shortest-path lengths over the same spawn stream
        // the episode will use.
        let mut budget = self.horizon as i64 - self.steps as i64;
        let mut pos = self.world.agent;
        let mut heading = self.world.heading;
        let mut idx = self.respawns;
        let mut count = 0.0;
        loop {
            let path = match self
                .world
                .shortest_action_path(pos, heading, &[self.goal])
            {
                Some(p) => p,
                None => break,
            };
            budget -= path.len() as i64;
            if budget < 0 {
                break;
            }
            count += 1.0;
            let (p, h) = self.spawn_stream[idx % self.spawn_stream.len()];
            idx += 1;
            pos = p;
            heading = h;
        }
        count
    }
}
