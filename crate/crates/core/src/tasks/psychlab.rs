//! Symbolic prompt/response analogs of the four psychology-lab families.
//!
//! All four share the 5-action set (look left/right/up/down, do nothing)
//! and a trial structure: one stimulus presentation per trial, +1 reward
//! per correct response. Stimuli are abstract ids rendered as one-hots
//! through the per-seed permutation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{episode_rng, stimulus_permutation, stimulus_pool_size, Env, StepResult, TaskSpec};
use crate::controller::ObsSpec;
use crate::error::{Error, Result};

pub const PSYCH_LOOK_LEFT: usize = 0;
pub const PSYCH_LOOK_RIGHT: usize = 1;
pub const PSYCH_LOOK_UP: usize = 2;
pub const PSYCH_LOOK_DOWN: usize = 3;
pub const PSYCH_NOOP: usize = 4;
pub const PSYCH_ACTIONS: usize = 5;

/// Steps a trial will wait for an answer action before scoring zero.
const ANSWER_WINDOW: usize = 10;

fn check_action(action: usize) -> Result<()> {
    if action >= PSYCH_ACTIONS {
        return Err(Error::IndexOutOfRange {
            index: action,
            len: PSYCH_ACTIONS,
        });
    }
    Ok(())
}

fn info(entries: &[(&str, f64)]) -> BTreeMap<String, f64> {
    entries
        .iter()
        .map(|(k, v)| (k.to_string(), *v))
        .collect()
}

// ---------------------------------------------------------------------
// Arbitrary visuomotor mapping
// ---------------------------------------------------------------------

/// Each trial shows a stimulus; its first showing reveals the associated
/// look-direction, repeats hide it. One response step per trial.
pub struct AvmEnv {
    spec: TaskSpec,
    pool_total: usize,
    perm: Vec<usize>,
    episode: u64,
    // Per-episode state.
    trials: Vec<(usize, usize)>, // (stimulus id, direction 0..4)
    trial: usize,
    shown: Vec<bool>,
    done: bool,
}

impl AvmEnv {
    pub fn new(spec: TaskSpec) -> Self {
        let pool_total = stimulus_pool_size(spec.family);
        let perm = stimulus_permutation(spec.family, spec.seed, pool_total);
        AvmEnv {
            spec,
            pool_total,
            perm,
            episode: 0,
            trials: Vec::new(),
            trial: 0,
            shown: Vec::new(),
            done: true,
        }
    }

    fn trials_per_episode(&self, rng: &mut ChaCha8Rng) -> usize {
        match self.spec.overrides.trials {
            Some(n) => n,
            None => {
                let opts = &self.spec.scale_options;
                opts[rng.random_range(0..opts.len())] as usize
            }
        }
    }

    fn observation(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.pool_total + 5];
        if self.trial < self.trials.len() {
            let (stim, dir) = self.trials[self.trial];
            obs[self.perm[stim]] = 1.0;
            if !self.shown[stim] {
                obs[self.pool_total + dir] = 1.0;
                obs[self.pool_total + 4] = 1.0; // hint-present flag
            }
        }
        obs
    }
}

impl Env for AvmEnv {
    fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    fn obs_spec(&self) -> ObsSpec {
        ObsSpec::Flat {
            dim: self.pool_total + 5,
        }
    }

    fn num_actions(&self) -> usize {
        PSYCH_ACTIONS
    }

    fn reset(&mut self) -> Vec<f64> {
        let mut rng = episode_rng(&self.spec, self.episode);
        self.episode += 1;
        let n = self.trials_per_episode(&mut rng);
        // Roughly 30% of trials introduce a new stimulus; the rest repeat
        // one, so a memoryless responder is capped well below the oracle.
        let uniques = ((n as f64 * 0.3).round() as usize).clamp(2.min(n), n);
        let mut pool = self.spec.stimulus_pool.clone();
        pool.shuffle(&mut rng);
        let chosen: Vec<usize> = pool.into_iter().take(uniques).collect();
        let mut seq: Vec<usize> = chosen.clone();
        for _ in uniques..n {
            seq.push(chosen[rng.random_range(0..chosen.len())]);
        }
        seq.shuffle(&mut rng);
        let mut dirs = vec![0usize; stimulus_pool_size(self.spec.family)];
        for &s in &chosen {
            dirs[s] = rng.random_range(0..4);
        }
        self.trials = seq.into_iter().map(|s| (s, dirs[s])).collect();
        self.trial = 0;
        self.shown = vec![false; stimulus_pool_size(self.spec.family)];
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        check_action(action)?;
        if self.done {
            return Err(Error::contract("step on finished episode"));
        }
        let (stim, dir) = self.trials[self.trial];
        let reward = if action == dir { 1.0 } else { 0.0 };
        self.shown[stim] = true;
        self.trial += 1;
        self.done = self.trial >= self.trials.len();
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.done,
            info: info(&[("trial", self.trial as f64)]),
        })
    }

    fn oracle_action(&mut self) -> usize {
        self.trials[self.trial].1
    }

    fn max_reward(&self) -> f64 {
        self.trials.len() as f64
    }
}

// ---------------------------------------------------------------------
// Continuous recognition
// ---------------------------------------------------------------------

/// Answer whether the trial's stimulus appeared earlier in the episode:
/// look left for seen, right for unseen. The trial waits (up to a window)
/// for a left/right answer.
pub struct ContinuousRecognitionEnv {
    spec: TaskSpec,
    pool_total: usize,
    perm: Vec<usize>,
    episode: u64,
    trials: Vec<(usize, bool)>, // (stimulus id, seen before)
    trial: usize,
    wait: usize,
    done: bool,
}

impl ContinuousRecognitionEnv {
    pub fn new(spec: TaskSpec) -> Self {
        let pool_total = stimulus_pool_size(spec.family);
        let perm = stimulus_permutation(spec.family, spec.seed, pool_total);
        ContinuousRecognitionEnv {
            spec,
            pool_total,
            perm,
            episode: 0,
            trials: Vec::new(),
            trial: 0,
            wait: 0,
            done: true,
        }
    }

    fn observation(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.pool_total + 1];
        if self.trial < self.trials.len() {
            obs[self.perm[self.trials[self.trial].0]] = 1.0;
            obs[self.pool_total] = 1.0;
        }
        obs
    }

    fn advance_trial(&mut self) {
        self.trial += 1;
        self.wait = 0;
        self.done = self.trial >= self.trials.len();
    }
}

impl Env for ContinuousRecognitionEnv {
    fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    fn obs_spec(&self) -> ObsSpec {
        ObsSpec::Flat {
            dim: self.pool_total + 1,
        }
    }

    fn num_actions(&self) -> usize {
        PSYCH_ACTIONS
    }

    fn reset(&mut self) -> Vec<f64> {
        let mut rng = episode_rng(&self.spec, self.episode);
        self.episode += 1;
        let n = match self.spec.overrides.trials {
            Some(n) => n,
            None => {
                let opts = &self.spec.scale_options;
                opts[rng.random_range(0..opts.len())] as usize
            }
        };
        let mut pool = self.spec.stimulus_pool.clone();
        pool.shuffle(&mut rng);
        let mut trials = Vec::with_capacity(n);
        let mut shown: Vec<usize> = Vec::new();
        let mut fresh = pool.into_iter();
        for t in 0..n {
            let force_new = shown.is_empty();
            let new = force_new || rng.random_bool(0.5);
            if new {
                match fresh.next() {
                    Some(id) => {
                        trials.push((id, false));
                        shown.push(id);
                        continue;
                    }
                    None => {}
                }
            }
            let _ = t;
            let id = shown[rng.random_range(0..shown.len())];
            trials.push((id, true));
        }
        self.trials = trials;
        self.trial = 0;
        self.wait = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        check_action(action)?;
        if self.done {
            return Err(Error::contract("step on finished episode"));
        }
        let seen = self.trials[self.trial].1;
        let mut reward = 0.0;
        match action {
            PSYCH_LOOK_LEFT | PSYCH_LOOK_RIGHT => {
                let answered_seen = action == PSYCH_LOOK_LEFT;
                if answered_seen == seen {
                    reward = 1.0;
                }
                self.advance_trial();
            }
            _ => {
                self.wait += 1;
                if self.wait >= ANSWER_WINDOW {
                    self.advance_trial();
                }
            }
        }
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.done,
            info: info(&[("trial", self.trial as f64)]),
        })
    }

    fn oracle_action(&mut self) -> usize {
        if self.trials[self.trial].1 {
            PSYCH_LOOK_LEFT
        } else {
            PSYCH_LOOK_RIGHT
        }
    }

    fn max_reward(&self) -> f64 {
        self.trials.len() as f64
    }
}

// ---------------------------------------------------------------------
// Change detection
// ---------------------------------------------------------------------

const PATTERN_CELLS: usize = 3;
const CD_DEFAULT_TRIALS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
enum CdPhase {
    Study,
    Delay(u32),
    Test(usize),
}

struct CdTrial {
    first: [usize; PATTERN_CELLS],
    second: [usize; PATTERN_CELLS],
    differ: bool,
    delay: u32,
}

/// Two cell-color patterns separated by a delay; answer whether they
/// differ (look left = same, right = different).
pub struct ChangeDetectionEnv {
    spec: TaskSpec,
    perm: Vec<usize>,
    episode: u64,
    trials: Vec<CdTrial>,
    trial: usize,
    phase: CdPhase,
    done: bool,
}

impl ChangeDetectionEnv {
    pub fn new(spec: TaskSpec) -> Self {
        let perm = stimulus_permutation(spec.family, spec.seed, stimulus_pool_size(spec.family));
        ChangeDetectionEnv {
            spec,
            perm,
            episode: 0,
            trials: Vec::new(),
            trial: 0,
            phase: CdPhase::Study,
            done: true,
        }
    }

    fn colors(&self) -> usize {
        stimulus_pool_size(self.spec.family)
    }

    fn observation(&self) -> Vec<f64> {
        let colors = self.colors();
        let mut obs = vec![0.0; PATTERN_CELLS * colors + 3];
        if !self.done && self.trial < self.trials.len() {
            let trial = &self.trials[self.trial];
            match self.phase {
                CdPhase::Study => {
                    for (cell, &c) in trial.first.iter().enumerate() {
                        obs[cell * colors + self.perm[c]] = 1.0;
                    }
                    obs[PATTERN_CELLS * colors] = 1.0;
                }
                CdPhase::Delay(_) => {
                    obs[PATTERN_CELLS * colors + 1] = 1.0;
                }
                CdPhase::Test(_) => {
                    for (cell, &c) in trial.second.iter().enumerate() {
                        obs[cell * colors + self.perm[c]] = 1.0;
                    }
                    obs[PATTERN_CELLS * colors + 2] = 1.0;
                }
            }
        }
        obs
    }

    fn advance_trial(&mut self) {
        self.trial += 1;
        self.phase = CdPhase::Study;
        self.done = self.trial >= self.trials.len();
    }
}

impl Env for ChangeDetectionEnv {
    fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    fn obs_spec(&self) -> ObsSpec {
        ObsSpec::Flat {
            dim: PATTERN_CELLS * self.colors() + 3,
        }
    }

    fn num_actions(&self) -> usize {
        PSYCH_ACTIONS
    }

    fn reset(&mut self) -> Vec<f64> {
        let mut rng = episode_rng(&self.spec, self.episode);
        self.episode += 1;
        let n = self.spec.overrides.trials.unwrap_or(CD_DEFAULT_TRIALS);
        let pool = &self.spec.stimulus_pool;
        let mut trials = Vec::with_capacity(n);
        for _ in 0..n {
            let mut first = [0usize; PATTERN_CELLS];
            for cell in first.iter_mut() {
                *cell = pool[rng.random_range(0..pool.len())];
            }
            let differ = rng.random_bool(0.5);
            let mut second = first;
            if differ {
                let cell = rng.random_range(0..PATTERN_CELLS);
                let mut new = first[cell];
                while new == first[cell] {
                    new = pool[rng.random_range(0..pool.len())];
                }
                second[cell] = new;
            }
            let delay = self.spec.scale_options
                [rng.random_range(0..self.spec.scale_options.len())];
            trials.push(CdTrial {
                first,
                second,
                differ,
                delay,
            });
        }
        self.trials = trials;
        self.trial = 0;
        self.phase = CdPhase::Study;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        check_action(action)?;
        if self.done {
            return Err(Error::contract("step on finished episode"));
        }
        let mut reward = 0.0;
        let trial_delay = self.trials[self.trial].delay;
        match self.phase {
            CdPhase::Study => {
                self.phase = if trial_delay == 0 {
                    CdPhase::Test(0)
                } else {
                    CdPhase::Delay(1)
                };
            }
            CdPhase::Delay(t) => {
                self.phase = if t >= trial_delay {
                    CdPhase::Test(0)
                } else {
                    CdPhase::Delay(t + 1)
                };
            }
            CdPhase::Test(waited) => match action {
                PSYCH_LOOK_LEFT | PSYCH_LOOK_RIGHT => {
                    let answered_differ = action == PSYCH_LOOK_RIGHT;
                    if answered_differ == self.trials[self.trial].differ {
                        reward = 1.0;
                    }
                    self.advance_trial();
                }
                _ => {
                    if waited + 1 >= ANSWER_WINDOW {
                        self.advance_trial();
                    } else {
                        self.phase = CdPhase::Test(waited + 1);
                    }
                }
            },
        }
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.done,
            info: info(&[("trial", self.trial as f64)]),
        })
    }

    fn oracle_action(&mut self) -> usize {
        match self.phase {
            CdPhase::Test(_) => {
                if self.trials[self.trial].differ {
                    PSYCH_LOOK_RIGHT
                } else {
                    PSYCH_LOOK_LEFT
                }
            }
            _ => PSYCH_NOOP,
        }
    }

    fn max_reward(&self) -> f64 {
        self.trials.len() as f64
    }
}

// ---------------------------------------------------------------------
// What then where
// ---------------------------------------------------------------------

const WTW_DEFAULT_TRIALS: usize = 10;
const EDGES: usize = 4; // indexed by the four look actions

#[derive(Debug, Clone, Copy, PartialEq)]
enum WtwPhase {
    What,
    Delay1(u32),
    Where,
    Delay2(u32),
    Test(usize),
}

struct WtwTrial {
    challenge: usize,
    layout: [usize; EDGES], // digit at each edge, indexed by look action
    answer: usize,          // edge (action) holding the challenge digit
    delay1: u32,
    delay2: u32,
}

/// Study a challenge digit, later see a four-digit layout, then report the
/// challenge digit's edge with the matching look action.
pub struct WhatThenWhereEnv {
    spec: TaskSpec,
    perm: Vec<usize>,
    episode: u64,
    trials: Vec<WtwTrial>,
    trial: usize,
    phase: WtwPhase,
    done: bool,
}

impl WhatThenWhereEnv {
    pub fn new(spec: TaskSpec) -> Self {
        let perm = stimulus_permutation(spec.family, spec.seed, stimulus_pool_size(spec.family));
        WhatThenWhereEnv {
            spec,
            perm,
            episode: 0,
            trials: Vec::new(),
            trial: 0,
            phase: WtwPhase::What,
            done: true,
        }
    }

    fn digits(&self) -> usize {
        stimulus_pool_size(self.spec.family)
    }

    fn observation(&self) -> Vec<f64> {
        let digits = self.digits();
        let mut obs = vec![0.0; digits + EDGES * digits + 4];
        if !self.done && self.trial < self.trials.len() {
            let trial = &self.trials[self.trial];
            match self.phase {
                WtwPhase::What => {
                    obs[self.perm[trial.challenge]] = 1.0;
                    obs[digits + EDGES * digits] = 1.0;
                }
                WtwPhase::Delay1(_) | WtwPhase::Delay2(_) => {
                    obs[digits + EDGES * digits + 1] = 1.0;
                }
                WtwPhase::Where => {
                    for (edge, &d) in trial.layout.iter().enumerate() {
                        obs[digits + edge * digits + self.perm[d]] = 1.0;
                    }
                    obs[digits + EDGES * digits + 2] = 1.0;
                }
                WtwPhase::Test(_) => {
                    obs[digits + EDGES * digits + 3] = 1.0;
                }
            }
        }
        obs
    }

    fn advance_trial(&mut self) {
        self.trial += 1;
        self.phase = WtwPhase::What;
        self.done = self.trial >= self.trials.len();
    }
}

impl Env for WhatThenWhereEnv {
    fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    fn obs_spec(&self) -> ObsSpec {
        ObsSpec::Flat {
            dim: self.digits() * (1 + EDGES) + 4,
        }
    }

    fn num_actions(&self) -> usize {
        PSYCH_ACTIONS
    }

    fn reset(&mut self) -> Vec<f64> {
        let mut rng = episode_rng(&self.spec, self.episode);
        self.episode += 1;
        let n = self.spec.overrides.trials.unwrap_or(WTW_DEFAULT_TRIALS);
        let pool = &self.spec.stimulus_pool;
        let mut trials = Vec::with_capacity(n);
        for _ in 0..n {
            let mut ids = pool.clone();
            ids.shuffle(&mut rng);
            let four: Vec<usize> = ids.into_iter().take(EDGES).collect();
            let challenge = four[0];
            let mut layout = [0usize; EDGES];
            let mut order: Vec<usize> = (0..EDGES).collect();
            order.shuffle(&mut rng);
            for (slot, &digit) in order.iter().zip(four.iter()) {
                layout[*slot] = digit;
            }
            let answer = layout
                .iter()
                .position(|&d| d == challenge)
                .expect("challenge placed");
            let opts = &self.spec.scale_options;
            trials.push(WtwTrial {
                challenge,
                layout,
                answer,
                delay1: opts[rng.random_range(0..opts.len())],
                delay2: opts[rng.random_range(0..opts.len())],
            });
        }
        self.trials = trials;
        self.trial = 0;
        self.phase = WtwPhase::What;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        check_action(action)?;
        if self.done {
            return Err(Error::contract("step on finished episode"));
        }
        let mut reward = 0.0;
        let (d1, d2) = {
            let t = &self.trials[self.trial];
            (t.delay1, t.delay2)
        };
        match self.phase {
            WtwPhase::What => {
                self.phase = if d1 == 0 {
                    WtwPhase::Where
                } else {
                    WtwPhase::Delay1(1)
                };
            }
            WtwPhase::Delay1(t) => {
                self.phase = if t >= d1 {
                    WtwPhase::Where
                } else {
                    WtwPhase::Delay1(t + 1)
                };
            }
            WtwPhase::Where => {
                self.phase = if d2 == 0 {
                    WtwPhase::Test(0)
                } else {
                    WtwPhase::Delay2(1)
                };
            }
            WtwPhase::Delay2(t) => {
                self.phase = if t >= d2 {
                    WtwPhase::Test(0)
                } else {
                    WtwPhase::Delay2(t + 1)
                };
            }
            WtwPhase::Test(waited) => {
                if action < EDGES {
                    if action == self.trials[self.trial].answer {
                        reward = 1.0;
                    }
                    self.advance_trial();
                } else if waited + 1 >= ANSWER_WINDOW {
                    self.advance_trial();
                } else {
                    self.phase = WtwPhase::Test(waited + 1);
                }
            }
        }
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.done,
            info: info(&[("trial", self.trial as f64)]),
        })
    }

    fn oracle_action(&mut self) -> usize {
        match self.phase {
            WtwPhase::Test(_) => self.trials[self.trial].answer,
            _ => PSYCH_NOOP,
        }
    }

    fn max_reward(&self) -> f64 {
        self.trials.len() as f64
    }
}
