//! Single runs and the ablation matrix.
//!
//! A run is single-threaded and deterministic: actor workers and the
//! learner interleave round-robin, each actor owning a private
//! environment, controller state, memory buffer, and sampling stream.
//! Training episodes sample uniformly between the small and large scales;
//! holdout levels are evaluated periodically with frozen parameters and
//! greedy action selection.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::hypers::Hypers;
use super::{normalized_score, LevelAnchors, RunRecord, ScoreRow, SeedCurves};
use crate::agent::{Agent, AgentConfig, AblationConfig};
use crate::checkpoint;
use crate::controller::ObsSpec;
use crate::error::{Error, Result};
use crate::learner::{evaluate_episodes, train_step, Actor, LearnerConfig, TrainMetrics, Trajectory};
use crate::optim::Optimizer;
use crate::params::ParameterSet;
use crate::tasks::{
    make_task_with, oracle_baseline, random_baseline, Env, Family, Level, StepResult, TaskOverrides,
    TaskSpec,
};

/// Uniform small/large sampling wrapper used for training episodes.
pub struct SampledTrainEnv {
    small: Box<dyn Env>,
    large: Box<dyn Env>,
    use_large: bool,
    rng: ChaCha8Rng,
}

impl SampledTrainEnv {
    pub fn new(family: Family, seed: u64, overrides: TaskOverrides) -> Self {
        SampledTrainEnv {
            small: make_task_with(family, Level::TrainSmall, seed, overrides),
            large: make_task_with(family, Level::TrainLarge, seed, overrides),
            use_large: false,
            rng: ChaCha8Rng::seed_from_u64(
                seed.wrapping_mul(0xA24B_AED4_963E_E407)
                    .wrapping_add(overrides.instance),
            ),
        }
    }

    fn current(&self) -> &dyn Env {
        if self.use_large {
            self.large.as_ref()
        } else {
            self.small.as_ref()
        }
    }

    fn current_mut(&mut self) -> &mut dyn Env {
        if self.use_large {
            self.large.as_mut()
        } else {
            self.small.as_mut()
        }
    }
}

impl Env for SampledTrainEnv {
    fn spec(&self) -> &TaskSpec {
        self.current().spec()
    }
    fn obs_spec(&self) -> ObsSpec {
        self.small.obs_spec()
    }
    fn num_actions(&self) -> usize {
        self.small.num_actions()
    }
    fn reset(&mut self) -> Vec<f64> {
        self.use_large = self.rng.random_bool(0.5);
        self.current_mut().reset()
    }
    fn step(&mut self, action: usize) -> Result<StepResult> {
        self.current_mut().step(action)
    }
    fn oracle_action(&mut self) -> usize {
        self.current_mut().oracle_action()
    }
    fn max_reward(&self) -> f64 {
        self.current().max_reward()
    }
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub hypers: Hypers,
    /// Cap on learner steps.
    pub budget: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub overrides: TaskOverrides,
    /// Stop when the best smoothed train window has not improved for this
    /// many learner steps. Stopping early can only lower the train score,
    /// never inflate it.
    pub early_stop_patience: Option<u64>,
    pub checkpoint_every: Option<u64>,
    /// Dump per-episode memory read/write diagnostics from actor 0.
    pub mem_trace: bool,
}

impl RunSettings {
    pub fn new(hypers: Hypers, budget: u64) -> Self {
        RunSettings {
            hypers,
            budget,
            eval_every: 250,
            eval_episodes: 10,
            overrides: TaskOverrides::default(),
            early_stop_patience: None,
            checkpoint_every: None,
            mem_trace: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub curves: SeedCurves,
    pub learner_steps: u64,
    pub wallclock_secs: f64,
    /// Populated when the run aborted (e.g. non-finite loss); failed runs
    /// are recorded, never dropped.
    pub failure: Option<String>,
}

/// Incremental mirror of the score pipeline's smoothing, used for early
/// stopping: EWMA each completed episode, rolling window of 10, running
/// best.
struct BestWindowTracker {
    alpha: f64,
    ewma: Option<f64>,
    window: Vec<f64>,
    pub best: f64,
    pub best_step: u64,
}

impl BestWindowTracker {
    fn new(alpha: f64) -> Self {
        BestWindowTracker {
            alpha,
            ewma: None,
            window: Vec::new(),
            best: f64::NEG_INFINITY,
            best_step: 0,
        }
    }

    fn push(&mut self, step: u64, reward: f64) {
        let s = match self.ewma {
            Some(prev) => self.alpha * reward + (1.0 - self.alpha) * prev,
            None => reward,
        };
        self.ewma = Some(s);
        self.window.push(s);
        if self.window.len() > 10 {
            self.window.remove(0);
        }
        let mean = self.window.iter().sum::<f64>() / self.window.len() as f64;
        if mean > self.best {
            self.best = mean;
            self.best_step = step;
        }
    }
}

fn eval_env(family: Family, level: Level, seed: u64, overrides: TaskOverrides, salt: u64) -> Box<dyn Env> {
    let mut o = overrides;
    o.instance = 1_000 + salt;
    make_task_with(family, level, seed, o)
}

/// Train one (family, ablation, seed) cell. Outputs land in `out_dir` when
/// given: metrics.csv, eval.csv, train_curve.csv, checkpoint.mra1, and the
/// optional mem_trace.csv.
pub fn run_single(
    family: Family,
    ablation: AblationConfig,
    seed: u64,
    settings: &RunSettings,
    out_dir: Option<&Path>,
) -> Result<RunOutcome> {
    let started = Instant::now();
    let h = settings.hypers;
    let probe = make_task_with(family, Level::TrainSmall, seed, settings.overrides);
    let agent = Agent::new(
        probe.obs_spec(),
        AgentConfig {
            ablation,
            dims: h.dims,
            memory: h.memory,
            cpc: h.cpc,
            rec: h.rec,
        },
    )?;
    drop(probe);
    let mut params: ParameterSet<f32> = agent.init_params(seed ^ 0x5EED_0001)?;
    let mut optimizer = Optimizer::new(h.optimizer);
    let lcfg = LearnerConfig {
        check_finite: true,
        ..h.learner
    };

    let mut actors: Vec<Actor<f32>> = (0..h.batch)
        .map(|i| {
            let mut o = settings.overrides;
            o.instance = i as u64;
            let env = SampledTrainEnv::new(family, seed, o);
            let mut actor = Actor::new(Box::new(env), &agent, seed ^ (0xAC70 + i as u64));
            if settings.mem_trace && i == 0 {
                actor.mem_trace = Some(Vec::new());
            }
            actor
        })
        .collect();
    let mut interp_env = eval_env(family, Level::HoldoutInterpolate, seed, settings.overrides, 1);
    let mut extrap_env = eval_env(family, Level::HoldoutExtrapolate, seed, settings.overrides, 2);
    let mut train_eval_env: Box<dyn Env> = {
        let mut o = settings.overrides;
        o.instance = 1_003;
        Box::new(SampledTrainEnv::new(family, seed, o))
    };

    let mut metrics_rows = String::from(
        "step,episode_return,total_loss,rl_loss,aux_loss,grad_norm,params_version\n",
    );
    let mut eval_rows = String::from("step,level,mean_reward,episodes\n");
    let mut curves = SeedCurves::default();
    let mut tracker = BestWindowTracker::new(family.ewma_alpha());
    let mut recent_returns: Vec<f64> = Vec::new();
    let mut failure = None;
    let mut steps_done = 0;

    'train: for step in 1..=settings.budget {
        let mut batch: Vec<Trajectory<f32>> = Vec::with_capacity(actors.len());
        for actor in actors.iter_mut() {
            let traj = actor.rollout(&agent, &params, h.unroll, false)?;
            for &ret in &traj.completed_returns {
                curves.train.push((step, ret));
                tracker.push(step, ret);
                recent_returns.push(ret);
                if recent_returns.len() > 10 {
                    recent_returns.remove(0);
                }
            }
            batch.push(traj);
        }
        let metrics: TrainMetrics =
            match train_step(&agent, &mut params, &mut optimizer, &batch, &lcfg) {
                Ok(m) => m,
                Err(e) => {
                    failure = Some(format!("aborted at step {step}: {e}"));
                    break 'train;
                }
            };
        steps_done = step;
        let mean_ret = if recent_returns.is_empty() {
            f64::NAN
        } else {
            recent_returns.iter().sum::<f64>() / recent_returns.len() as f64
        };
        metrics_rows.push_str(&format!(
            "{step},{mean_ret:.4},{:.6},{:.6},{:.6},{:.6},{}\n",
            metrics.total_loss,
            metrics.rl_loss,
            metrics.aux_loss,
            metrics.grad_norm,
            metrics.params_version
        ));

        let due_eval = step % settings.eval_every == 0 || step == settings.budget;
        if due_eval {
            for (env, level_name, curve) in [
                (
                    interp_env.as_mut(),
                    "holdout-interpolate",
                    Some(&mut curves.holdout_interp),
                ),
                (
                    extrap_env.as_mut(),
                    "holdout-extrapolate",
                    Some(&mut curves.holdout_extrap),
                ),
                (train_eval_env.as_mut(), "train", None),
            ] {
                let rewards = evaluate_episodes(
                    env,
                    &agent,
                    &params,
                    settings.eval_episodes,
                    true,
                    seed ^ step,
                )?;
                let mean = rewards.iter().sum::<f64>() / rewards.len().max(1) as f64;
                eval_rows.push_str(&format!(
                    "{step},{level_name},{mean:.4},{}\n",
                    rewards.len()
                ));
                if let Some(curve) = curve {
                    curve.push((step, mean));
                }
            }
        }
        if let Some(dir) = out_dir {
            if let Some(every) = settings.checkpoint_every {
                if step % every == 0 {
                    checkpoint::save(&params, &dir.join(format!("checkpoint_{step}.mra1")))?;
                }
            }
        }
        if let Some(patience) = settings.early_stop_patience {
            if step.saturating_sub(tracker.best_step) >= patience && !curves.train.is_empty() {
                break 'train;
            }
        }
    }

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.csv"), &metrics_rows)?;
        fs::write(dir.join("eval.csv"), &eval_rows)?;
        let mut train_curve = String::from("step,episode_return\n");
        for &(s, r) in &curves.train {
            train_curve.push_str(&format!("{s},{r:.4}\n"));
        }
        fs::write(dir.join("train_curve.csv"), train_curve)?;
        checkpoint::save(&params, &dir.join("checkpoint.mra1"))?;
        if let Some(trace) = actors[0].mem_trace.take() {
            let mut f = fs::File::create(dir.join("mem_trace.csv"))?;
            writeln!(f, "step,write_index,neighbor_indices,weights")?;
            for row in trace {
                writeln!(f, "{row}")?;
            }
        }
        let mut manifest = format!(
            "family={}\nconfig={}\nseed={seed}\nlearner_steps={steps_done}\nbudget={}\n",
            family.name(),
            ablation.id(),
            settings.budget
        );
        manifest.push_str(&format!(
            "status={}\n",
            failure.as_deref().unwrap_or("completed")
        ));
        fs::write(dir.join("manifest.txt"), manifest)?;
    }

    Ok(RunOutcome {
        curves,
        learner_steps: steps_done,
        wallclock_secs: started.elapsed().as_secs_f64(),
        failure,
    })
}

/// Estimate (random, oracle) reward anchors for every level of a family.
pub fn estimate_anchors(
    family: Family,
    seed: u64,
    overrides: TaskOverrides,
    random_episodes: usize,
    oracle_episodes: usize,
) -> Result<LevelAnchors> {
    let mut o = overrides;
    o.instance = 9_999;
    let anchor_for = |env: &mut dyn Env| -> (f64, f64) {
        let (oracle, _) = oracle_baseline(env, oracle_episodes);
        let (random, _) = random_baseline(env, random_episodes, seed ^ 0xBA5E);
        (random, oracle)
    };
    let mut train = SampledTrainEnv::new(family, seed, o);
    let mut interp = make_task_with(family, Level::HoldoutInterpolate, seed, o);
    let mut extrap = make_task_with(family, Level::HoldoutExtrapolate, seed, o);
    let anchors = LevelAnchors {
        train: anchor_for(&mut train),
        interp: anchor_for(interp.as_mut()),
        extrap: anchor_for(extrap.as_mut()),
    };
    anchors.validate()?;
    Ok(anchors)
}

/// All (family, config, seed) cells of a matrix, in deterministic order.
pub fn enumerate_runs(
    families: &[Family],
    configs: &[AblationConfig],
    seeds: &[u64],
) -> Vec<(Family, AblationConfig, u64)> {
    let mut cells = Vec::new();
    for &seed in seeds {
        for &family in families {
            for &config in configs {
                cells.push((family, config, seed));
            }
        }
    }
    cells
}

/// Run the matrix, persist per-run outputs under
/// `<out_root>/<family>/<config>/<seed>/`, and emit the score report at the
/// root. Returns the run records and score rows.
pub fn run_matrix(
    families: &[Family],
    configs: &[AblationConfig],
    seeds: &[u64],
    settings: &RunSettings,
    out_root: &Path,
) -> Result<(Vec<RunRecord>, Vec<ScoreRow>)> {
    if families.is_empty() || configs.is_empty() || seeds.is_empty() {
        return Err(Error::contract("empty matrix"));
    }
    let mut anchors: BTreeMap<Family, LevelAnchors> = BTreeMap::new();
    for &family in families {
        anchors.insert(
            family,
            estimate_anchors(family, seeds[0], settings.overrides, 100, 10)?,
        );
    }
    let mut records = Vec::new();
    let mut rows = Vec::new();
    for &family in families {
        for &config in configs {
            let mut curves = Vec::new();
            let mut steps = 0;
            let mut wall = 0.0;
            for &seed in seeds {
                let dir: PathBuf = out_root
                    .join(family.name())
                    .join(config.id())
                    .join(seed.to_string());
                let outcome = run_single(family, config, seed, settings, Some(&dir))?;
                let mut c = outcome.curves;
                if c.train.is_empty() {
                    // Failed before any episode completed: anchor at random.
                    c.train.push((0, anchors[&family].train.0));
                }
                curves.push(c);
                steps = steps.max(outcome.learner_steps);
                wall += outcome.wallclock_secs;
            }
            let record = RunRecord {
                config: config.id(),
                family,
                seeds: seeds.to_vec(),
                curves,
                learner_steps: steps,
                wallclock_secs: wall,
            };
            rows.push(normalized_score(
                &record,
                &anchors[&family],
                family.ewma_alpha(),
            )?);
            records.push(record);
        }
    }
    super::emit_report(&rows, &records, out_root)?;
    Ok((records, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AblationConfig;
    use crate::controller::CoreKind;

    #[test]
    fn matrix_enumeration_is_complete() {
        let cells = enumerate_runs(&Family::ALL, &AblationConfig::all(), &[0]);
        assert_eq!(cells.len(), 130);
        let cells3 = enumerate_runs(&Family::ALL, &AblationConfig::all(), &[0, 1, 2]);
        assert_eq!(cells3.len(), 390);
    }

    #[test]
    fn train_env_samples_both_scales() {
        let mut env = SampledTrainEnv::new(
            Family::TransitiveInference,
            3,
            TaskOverrides::default(),
        );
        let mut smalls = 0;
        let mut larges = 0;
        for _ in 0..40 {
            env.reset();
            match env.spec().level {
                Level::TrainSmall => smalls += 1,
                Level::TrainLarge => larges += 1,
                _ => panic!("train env must sample training levels"),
            }
        }
        assert!(smalls >= 8 && larges >= 8, "{smalls}/{larges}");
    }

    #[test]
    fn anchors_estimated_for_all_levels() {
        let a = estimate_anchors(
            Family::Avm,
            1,
            TaskOverrides {
                trials: Some(10),
                instance: 0,
            },
            60,
            5,
        )
        .unwrap();
        assert!((a.train.1 - 10.0).abs() < 1e-9);
        assert!(a.train.0 > 0.5 && a.train.0 < 4.0);
        assert!(a.interp.1 > a.interp.0);
    }

    #[test]
    fn tiny_smoke_run_completes_and_emits_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut settings = RunSettings::new(super::super::desk_hypers(Family::Avm), 3);
        settings.hypers.dims.embed = 8;
        settings.hypers.dims.hidden = 8;
        settings.hypers.dims.enc_hidden = 8;
        settings.hypers.unroll = 5;
        settings.hypers.batch = 2;
        settings.hypers.cpc.steps = 3;
        settings.eval_every = 2;
        settings.eval_episodes = 2;
        settings.overrides.trials = Some(5);
        settings.mem_trace = true;
        let config = AblationConfig::new(CoreKind::Lstm, true, crate::agent::AuxKind::Cpc);
        let outcome =
            run_single(Family::Avm, config, 0, &settings, Some(dir.path())).unwrap();
        assert!(outcome.failure.is_none());
        assert_eq!(outcome.learner_steps, 3);
        for file in [
            "metrics.csv",
            "eval.csv",
            "train_curve.csv",
            "checkpoint.mra1",
            "manifest.txt",
            "mem_trace.csv",
        ] {
            assert!(dir.path().join(file).exists(), "{file} missing");
        }
        let params: ParameterSet<f32> =
            checkpoint::load(&dir.path().join("checkpoint.mra1")).unwrap();
        assert_eq!(params.version(), 3);
    }
}
