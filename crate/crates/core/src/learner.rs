//! Off-policy actor-critic training with V-trace corrections.
//!
//! Actors roll the agent forward with a parameter snapshot, recording the
//! behavior logits at generation time; policy lag relative to the learner
//! is expected and corrected by the truncated importance weights. The
//! learner replays each trajectory teacher-forced on a fresh tape (memory
//! buffer restored from the unroll-start snapshot), adds the configured
//! auxiliary loss, and applies one optimizer step.


use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{Agent, AuxKind};
use crate::auxloss::{cpc_loss, rec_loss, CpcConfig};
use crate::controller::{bind_params, CoreState};
use crate::epmem::{trace_row, EpisodicBuffer};
use crate::error::{Error, Result};
use crate::optim::Optimizer;
use crate::params::ParameterSet;
use crate::tape::{NodeId, Tape};
use crate::tasks::Env;
use crate::tensor::Scalar;
use crate::vtrace::{rl_loss, softmax_f64, vtrace_targets, VTraceConfig};

/// Fixed-length unroll of experience plus the state snapshots needed to
/// replay it exactly.
#[derive(Debug, Clone)]
pub struct Trajectory<S> {
    /// T+1 observations; the last is the bootstrap input.
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Actor logits at generation time.
    pub behavior_logits: Vec<Vec<f64>>,
    pub dones: Vec<bool>,
    pub init_state: CoreState<S>,
    pub init_buffer: Option<EpisodicBuffer<S>>,
    /// Reward/action preceding the unroll (zero at an episode start), for
    /// the reconstruction targets.
    pub prev_reward: f64,
    pub prev_action: usize,
    /// Returns of episodes that finished during this unroll.
    pub completed_returns: Vec<f64>,
}

impl<S> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

pub fn sample_action(logits: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let probs = softmax_f64(logits);
    let mut u: f64 = rng.random();
    for (i, p) in probs.iter().enumerate() {
        u -= p;
        if u <= 0.0 {
            return i;
        }
    }
    probs.len() - 1
}

pub fn greedy_action(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    best
}

/// One worker owning an environment, its controller state, its memory
/// buffer, and a private sampling stream. State persists across unrolls
/// within an episode and resets at episode boundaries.
pub struct Actor<S: Scalar> {
    pub env: Box<dyn Env>,
    state: CoreState<S>,
    buffer: Option<EpisodicBuffer<S>>,
    obs: Vec<f64>,
    rng: ChaCha8Rng,
    started: bool,
    episode_return: f64,
    prev_reward: f64,
    prev_action: usize,
    /// When set, collects per-episode memory diagnostics rows
    /// (step, write_index, neighbor_indices, weights).
    pub mem_trace: Option<Vec<String>>,
    step_counter: u64,
}

impl<S: Scalar> Actor<S> {
    pub fn new(env: Box<dyn Env>, agent: &Agent, sample_seed: u64) -> Self {
        Actor {
            env,
            state: CoreState::zeros(agent.config.dims.hidden),
            buffer: agent.fresh_buffer(),
            obs: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(sample_seed),
            started: false,
            episode_return: 0.0,
            prev_reward: 0.0,
            prev_action: 0,
            mem_trace: None,
            step_counter: 0,
        }
    }

    fn begin_episode(&mut self, agent: &Agent) {
        self.obs = self.env.reset();
        self.state = CoreState::zeros(agent.config.dims.hidden);
        if let Some(buf) = self.buffer.as_mut() {
            buf.reset();
        }
        self.episode_return = 0.0;
        self.prev_reward = 0.0;
        self.prev_action = 0;
        self.step_counter = 0;
    }

    /// Roll exactly `unroll` steps, sampling from the policy (or acting
    /// greedily when `greedy` is set).
    pub fn rollout(
        &mut self,
        agent: &Agent,
        params: &ParameterSet<S>,
        unroll: usize,
        greedy: bool,
    ) -> Result<Trajectory<S>> {
        if unroll == 0 {
            return Err(Error::contract("unroll length must be >= 1"));
        }
        if !self.started {
            self.begin_episode(agent);
            self.started = true;
        }
        // Any live tape linkage in the buffer belonged to the previous
        // unroll's tape; only value snapshots cross unroll boundaries.
        if let Some(buf) = self.buffer.take() {
            self.buffer = Some(buf.snapshot());
        }
        let mut tape = Tape::new();
        let b = bind_params(&mut tape, params);
        let init_state = self.state.clone();
        let init_buffer = self.buffer.as_ref().map(|buf| buf.snapshot());
        let prev_reward = self.prev_reward;
        let prev_action = self.prev_action;

        let mut h = tape.leaf(self.state.h.clone());
        let mut c = tape.leaf(self.state.c.clone());
        let mut observations = Vec::with_capacity(unroll + 1);
        let mut actions = Vec::with_capacity(unroll);
        let mut rewards = Vec::with_capacity(unroll);
        let mut behavior_logits = Vec::with_capacity(unroll);
        let mut dones = Vec::with_capacity(unroll);
        let mut completed_returns = Vec::new();

        for _ in 0..unroll {
            observations.push(self.obs.clone());
            let out = agent.step_on_tape(&mut tape, &b, &mut self.buffer, &self.obs, h, c)?;
            let logits = tape.value(out.logits).to_f64_vec();
            let action = if greedy {
                greedy_action(&logits)
            } else {
                sample_action(&logits, &mut self.rng)
            };
            if let (Some(trace), Some(read)) = (self.mem_trace.as_mut(), out.read.as_ref()) {
                trace.push(trace_row(
                    self.step_counter,
                    out.write_index.unwrap_or(0),
                    &read.neighbors,
                    &read.weights,
                ));
            }
            behavior_logits.push(logits);
            actions.push(action);
            let r = self.env.step(action)?;
            rewards.push(r.reward);
            dones.push(r.done);
            self.episode_return += r.reward;
            self.prev_reward = r.reward;
            self.prev_action = action;
            self.step_counter += 1;
            if r.done {
                completed_returns.push(self.episode_return);
                self.begin_episode(agent);
                let (zh, zc) = agent.zero_state_nodes(&mut tape);
                h = zh;
                c = zc;
            } else {
                self.obs = r.observation;
                h = out.h;
                c = out.c;
            }
        }
        observations.push(self.obs.clone());
        self.state = CoreState {
            h: tape.value(h).clone(),
            c: tape.value(c).clone(),
        };
        Ok(Trajectory {
            observations,
            actions,
            rewards,
            behavior_logits,
            dones,
            init_state,
            init_buffer,
            prev_reward,
            prev_action,
            completed_returns,
        })
    }
}

/// Run full episodes with frozen parameters; returns episode rewards.
pub fn evaluate_episodes<S: Scalar>(
    env: &mut dyn Env,
    agent: &Agent,
    params: &ParameterSet<S>,
    episodes: usize,
    greedy: bool,
    sample_seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset();
        let mut buffer = agent.fresh_buffer::<S>();
        let mut tape = Tape::new();
        let b = bind_params(&mut tape, params);
        let (mut h, mut c) = agent.zero_state_nodes(&mut tape);
        let mut total = 0.0;
        loop {
            let out = agent.step_on_tape(&mut tape, &b, &mut buffer, &obs, h, c)?;
            let logits = tape.value(out.logits).to_f64_vec();
            let action = if greedy {
                greedy_action(&logits)
            } else {
                sample_action(&logits, &mut rng)
            };
            let r = env.step(action)?;
            total += r.reward;
            if r.done {
                break;
            }
            obs = r.observation;
            h = out.h;
            c = out.c;
        }
        returns.push(total);
    }
    Ok(returns)
}

#[derive(Debug, Clone, Copy)]
pub struct LearnerConfig {
    pub vtrace: VTraceConfig,
    pub entropy_cost: f64,
    pub baseline_cost: f64,
    /// Abort a step whose loss goes non-finite (always on in tests).
    pub check_finite: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            vtrace: VTraceConfig::default(),
            entropy_cost: 0.01,
            baseline_cost: 0.5,
            check_finite: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainMetrics {
    pub total_loss: f64,
    pub rl_loss: f64,
    pub aux_loss: f64,
    pub grad_norm: f64,
    pub params_version: u64,
}

/// Replay a batch teacher-forced, combine RL and auxiliary losses, apply
/// one optimizer step, and bump the parameter version.
pub fn train_step<S: Scalar>(
    agent: &Agent,
    params: &mut ParameterSet<S>,
    optimizer: &mut Optimizer,
    batch: &[Trajectory<S>],
    cfg: &LearnerConfig,
) -> Result<TrainMetrics> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let mut tape = Tape::new();
    tape.set_check_finite(cfg.check_finite);
    let b = bind_params(&mut tape, params);

    let mut total: Option<NodeId> = None;
    let mut rl_sum = 0.0;
    let mut aux_sum = 0.0;
    for traj in batch {
        let t_len = traj.len();
        if traj.observations.len() != t_len + 1 {
            return Err(Error::contract(format!(
                "trajectory has {} observations for {} steps",
                traj.observations.len(),
                t_len
            )));
        }
        let mut buffer = traj.init_buffer.clone();
        let mut h = tape.leaf(traj.init_state.h.clone());
        let mut c = tape.leaf(traj.init_state.c.clone());
        let mut logits_nodes = Vec::with_capacity(t_len);
        let mut value_nodes = Vec::with_capacity(t_len);
        let mut h_nodes = Vec::with_capacity(t_len);
        let mut x_nodes = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let out = agent.step_on_tape(&mut tape, &b, &mut buffer, &traj.observations[t], h, c)?;
            logits_nodes.push(out.logits);
            value_nodes.push(out.value);
            h_nodes.push(out.h);
            x_nodes.push(out.x);
            if traj.dones[t] {
                let (zh, zc) = agent.zero_state_nodes(&mut tape);
                h = zh;
                c = zc;
                if let Some(buf) = buffer.as_mut() {
                    buf.reset();
                }
            } else {
                h = out.h;
                c = out.c;
            }
        }
        // Bootstrap value for obs[T].
        let boot = agent.step_on_tape(&mut tape, &b, &mut buffer, &traj.observations[t_len], h, c)?;

        let mut values: Vec<f64> = value_nodes
            .iter()
            .map(|&v| tape.value(v).item().map(|x| x.as_f64()))
            .collect::<Result<_>>()?;
        values.push(tape.value(boot.value).item()?.as_f64());
        let target_logits: Vec<Vec<f64>> = logits_nodes
            .iter()
            .map(|&l| tape.value(l).to_f64_vec())
            .collect();
        let vt = vtrace_targets(
            &traj.rewards,
            &traj.dones,
            &traj.actions,
            &traj.behavior_logits,
            &target_logits,
            &values,
            &cfg.vtrace,
        )?;
        let rl = rl_loss(
            &mut tape,
            &logits_nodes,
            &value_nodes,
            &traj.actions,
            &vt,
            cfg.entropy_cost,
            cfg.baseline_cost,
        )?;
        rl_sum += tape.value(rl.total).item()?.as_f64();

        let aux = match agent.config.ablation.aux {
            AuxKind::None => None,
            AuxKind::Cpc => {
                let steps = agent.config.cpc.steps.min(t_len.saturating_sub(1));
                if steps == 0 {
                    None
                } else {
                    let cpc_cfg = CpcConfig {
                        steps,
                        weight: agent.config.cpc.weight,
                    };
                    Some(cpc_loss(&mut tape, &b, &h_nodes, &x_nodes, &cpc_cfg)?)
                }
            }
            AuxKind::Rec => {
                let mut prev_r = Vec::with_capacity(t_len);
                let mut prev_a = Vec::with_capacity(t_len);
                for t in 0..t_len {
                    if t == 0 {
                        prev_r.push(traj.prev_reward);
                        prev_a.push(traj.prev_action);
                    } else if traj.dones[t - 1] {
                        prev_r.push(0.0);
                        prev_a.push(0);
                    } else {
                        prev_r.push(traj.rewards[t - 1]);
                        prev_a.push(traj.actions[t - 1]);
                    }
                }
                Some(rec_loss(
                    &mut tape,
                    &b,
                    &h_nodes,
                    &prev_r,
                    &prev_a,
                    &traj.observations[..t_len],
                    agent.config.dims.num_actions,
                    &agent.config.rec,
                )?)
            }
        };
        let traj_total = match aux {
            Some(a) => {
                aux_sum += tape.value(a).item()?.as_f64();
                tape.add(rl.total, a)?
            }
            None => rl.total,
        };
        total = Some(match total {
            Some(acc) => tape.add(acc, traj_total)?,
            None => traj_total,
        });
    }

    let scale = 1.0 / batch.len() as f64;
    let total = tape.mul_scalar(total.expect("nonempty batch"), scale)?;
    let total_loss = tape.value(total).item()?.as_f64();
    if !total_loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "training loss (rl={rl_sum}, aux={aux_sum}, version={})",
            params.version()
        )));
    }
    tape.backward(total)?;
    let grads = tape.gradient_map(&b);
    let grad_norm = optimizer.step(params, &grads)?;
    Ok(TrainMetrics {
        total_loss,
        rl_loss: rl_sum * scale,
        aux_loss: aux_sum * scale,
        grad_norm,
        params_version: params.version(),
    })
}
