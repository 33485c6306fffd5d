//! Command-line interface: train single runs or matrices, evaluate
//! checkpoints, rebuild reports from saved runs, verify gradients, and
//! inspect or play the task suite.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use memrl_core::agent::{AblationConfig, Agent, AgentConfig};
use memrl_core::checkpoint;
use memrl_core::config::{document, FileConfig};
use memrl_core::gradcheck::grad_check;
use memrl_core::harness::{
    emit_report, estimate_anchors, normalized_score, run_matrix, run_single, RunRecord,
    RunSettings, ScoreRow, SeedCurves,
};
use memrl_core::learner::evaluate_episodes;
use memrl_core::params::ParameterSet;
use memrl_core::tasks::{
    make_task_with, scale_options, stimulus_pool, Family, Level, TaskOverrides,
};
use memrl_core::tensor::Tensor;

#[derive(Parser)]
#[command(name = "memrl", about = "episodic-memory RL testbed", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one (family, config, seed) run.
    Train(TrainArgs),
    /// Train a families x configs x seeds matrix and emit the report.
    Matrix(MatrixArgs),
    /// Evaluate a checkpoint on one level with frozen parameters.
    Eval(EvalArgs),
    /// Rebuild the score report from a directory of completed runs.
    Report(ReportArgs),
    /// Run the finite-difference gradient checks and print a report.
    Gradcheck,
    /// Task-suite inspection and scripted play.
    #[command(subcommand)]
    Tasks(TasksCmd),
    /// Print every configuration-file key.
    ConfigKeys,
}

#[derive(Args)]
struct TrainArgs {
    /// Task family name (see `tasks list`).
    #[arg(long)]
    family: String,
    /// Ablation id, e.g. lstm_mem_cpc.
    #[arg(long)]
    config: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Learner-step budget.
    #[arg(long, default_value_t = 200_000)]
    budget: u64,
    /// Optional key=value configuration file.
    #[arg(long)]
    config_file: Option<PathBuf>,
    /// Output root directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct MatrixArgs {
    /// Families to run (repeatable); default all 13.
    #[arg(long = "family")]
    families: Vec<String>,
    /// Ablation ids to run (repeatable); default all 10.
    #[arg(long = "config")]
    configs: Vec<String>,
    /// Number of seeds (0..n).
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long, default_value_t = 2_000)]
    budget: u64,
    #[arg(long)]
    config_file: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    family: String,
    /// Ablation id the checkpoint was trained with.
    #[arg(long)]
    config: String,
    /// Level name, e.g. holdout-interpolate.
    #[arg(long)]
    level: String,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config_file: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory produced by `matrix` (family/config/seed subdirs).
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    config_file: Option<PathBuf>,
}

#[derive(Subcommand)]
enum TasksCmd {
    /// Print the family/level scale and stimulus tables.
    List,
    /// Run a scripted policy and emit a per-trial CSV.
    Play(PlayArgs),
}

#[derive(Args)]
struct PlayArgs {
    #[arg(long)]
    family: String,
    #[arg(long, default_value = "train-small")]
    level: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    /// oracle or random.
    #[arg(long, default_value = "oracle")]
    policy: String,
    /// Trials-per-episode override for the trial families (0 = tables).
    #[arg(long, default_value_t = 0)]
    trials: usize,
}

fn load_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {p:?}"))?;
            Ok(FileConfig::parse(&text)?)
        }
        None => Ok(FileConfig::default()),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => {
            let family = Family::parse(&args.family)?;
            let ablation = AblationConfig::parse(&args.config)?;
            let cfg = load_config(&args.config_file)?;
            let settings: RunSettings = cfg.to_settings(family, args.budget)?;
            let dir = args
                .out
                .join(family.name())
                .join(ablation.id())
                .join(args.seed.to_string());
            let outcome = run_single(family, ablation, args.seed, &settings, Some(&dir))?;
            match &outcome.failure {
                Some(f) => println!("run FAILED: {f} (outputs in {})", dir.display()),
                None => println!(
                    "completed {} learner steps in {:.1}s (outputs in {})",
                    outcome.learner_steps,
                    outcome.wallclock_secs,
                    dir.display()
                ),
            }
        }
        Command::Matrix(args) => {
            let families: Vec<Family> = if args.families.is_empty() {
                Family::ALL.to_vec()
            } else {
                args.families
                    .iter()
                    .map(|f| Family::parse(f))
                    .collect::<memrl_core::Result<_>>()?
            };
            let configs: Vec<AblationConfig> = if args.configs.is_empty() {
                AblationConfig::all()
            } else {
                args.configs
                    .iter()
                    .map(|c| AblationConfig::parse(c))
                    .collect::<memrl_core::Result<_>>()?
            };
            let seeds: Vec<u64> = (0..args.seeds).collect();
            let cfg = load_config(&args.config_file)?;
            let settings = cfg.to_settings(families[0], args.budget)?;
            let (records, rows) = run_matrix(&families, &configs, &seeds, &settings, &args.out)?;
            println!(
                "ran {} cells; report at {}",
                records.len() * seeds.len(),
                args.out.join("report.csv").display()
            );
            for row in rows {
                println!(
                    "{:<28} {:<24} train {:6.1} interp {:6.1} extrap {:6.1}",
                    row.config, row.family, row.train.0, row.interp.0, row.extrap.0
                );
            }
        }
        Command::Eval(args) => {
            let family = Family::parse(&args.family)?;
            let ablation = AblationConfig::parse(&args.config)?;
            let level = Level::parse(&args.level)?;
            let cfg = load_config(&args.config_file)?;
            let settings = cfg.to_settings(family, 0)?;
            let overrides = TaskOverrides {
                instance: 7_777,
                ..settings.overrides
            };
            let mut env = make_task_with(family, level, args.seed, overrides);
            let agent = Agent::new(
                env.obs_spec(),
                AgentConfig {
                    ablation,
                    dims: settings.hypers.dims,
                    memory: settings.hypers.memory,
                    cpc: settings.hypers.cpc,
                    rec: settings.hypers.rec,
                },
            )?;
            let params: ParameterSet<f32> = checkpoint::load(&args.checkpoint)?;
            let expected = agent.expected_param_ids()?;
            if params.ids() != expected {
                bail!(
                    "checkpoint parameter ids do not match config {:?}",
                    ablation.id()
                );
            }
            let rewards =
                evaluate_episodes(env.as_mut(), &agent, &params, args.episodes, true, args.seed)?;
            let mean = rewards.iter().sum::<f64>() / rewards.len().max(1) as f64;
            println!("episodes,{}", rewards.len());
            println!("mean_reward,{mean:.4}");
            for (i, r) in rewards.iter().enumerate() {
                println!("episode_{i},{r:.4}");
            }
        }
        Command::Report(args) => {
            let cfg = load_config(&args.config_file)?;
            let (records, rows) = rebuild_report(&args.runs, &cfg)?;
            emit_report(&rows, &records, &args.runs)?;
            println!(
                "report rebuilt from {} runs at {}",
                records.len(),
                args.runs.join("report.csv").display()
            );
        }
        Command::Gradcheck => run_gradcheck()?,
        Command::Tasks(TasksCmd::List) => print_task_tables(),
        Command::Tasks(TasksCmd::Play(args)) => play(args)?,
        Command::ConfigKeys => print!("{}", document()),
    }
    Ok(())
}

/// Reread train/eval curves from run directories and recompute scores.
fn rebuild_report(root: &PathBuf, cfg: &FileConfig) -> Result<(Vec<RunRecord>, Vec<ScoreRow>)> {
    let mut records: Vec<RunRecord> = Vec::new();
    let mut rows = Vec::new();
    let mut fam_dirs: Vec<PathBuf> = fs::read_dir(root)
        .with_context(|| format!("reading {root:?}"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    fam_dirs.sort();
    for fam_dir in fam_dirs {
        let Ok(family) = Family::parse(
            fam_dir
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default(),
        ) else {
            continue;
        };
        let settings = cfg.to_settings(family, 0)?;
        let anchors = estimate_anchors(family, 0, settings.overrides, 100, 10)?;
        let mut cfg_dirs: Vec<PathBuf> = fs::read_dir(&fam_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        cfg_dirs.sort();
        for cfg_dir in cfg_dirs {
            let config_id = cfg_dir
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            let mut seeds = Vec::new();
            let mut curves = Vec::new();
            let mut seed_dirs: Vec<PathBuf> = fs::read_dir(&cfg_dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            seed_dirs.sort();
            for seed_dir in seed_dirs {
                let Some(seed) = seed_dir
                    .file_name()
                    .and_then(|n| n.to_str())
                    .and_then(|s| s.parse::<u64>().ok())
                else {
                    continue;
                };
                let mut c = SeedCurves::default();
                let train_text = fs::read_to_string(seed_dir.join("train_curve.csv"))?;
                for line in train_text.lines().skip(1) {
                    if let Some((s, r)) = line.split_once(',') {
                        c.train.push((s.parse()?, r.parse()?));
                    }
                }
                let eval_text = fs::read_to_string(seed_dir.join("eval.csv"))?;
                for line in eval_text.lines().skip(1) {
                    let parts: Vec<&str> = line.split(',').collect();
                    if parts.len() >= 3 {
                        let step: u64 = parts[0].parse()?;
                        let val: f64 = parts[2].parse()?;
                        match parts[1] {
                            "holdout-interpolate" => c.holdout_interp.push((step, val)),
                            "holdout-extrapolate" => c.holdout_extrap.push((step, val)),
                            _ => {}
                        }
                    }
                }
                if c.train.is_empty() {
                    c.train.push((0, anchors.train.0));
                }
                seeds.push(seed);
                curves.push(c);
            }
            if curves.is_empty() {
                continue;
            }
            let record = RunRecord {
                config: config_id,
                family,
                seeds,
                curves,
                learner_steps: 0,
                wallclock_secs: 0.0,
            };
            rows.push(normalized_score(&record, &anchors, family.ewma_alpha())?);
            records.push(record);
        }
    }
    if records.is_empty() {
        bail!("no runs found under {root:?}");
    }
    Ok((records, rows))
}

fn run_gradcheck() -> Result<()> {
    let quadratic = vec![("x".to_string(), Tensor::vector(vec![3.0, -2.0]))];
    let report = grad_check(&quadratic, 1e-5, |tape, ids| {
        let sq = tape.square(ids[0])?;
        tape.sum(sq)
    })?;
    let mut failed = !report.passes(1e-4);
    println!(
        "quadratic: max relative error {:.3e} [{}]",
        report.max_rel_err(),
        if report.passes(1e-4) { "pass" } else { "FAIL" }
    );

    let chain = vec![
        (
            "w".to_string(),
            Tensor::matrix(3, 3, vec![0.3, -0.1, 0.5, 0.2, 0.7, -0.4, 0.0, 0.9, 0.1]).unwrap(),
        ),
        ("x".to_string(), Tensor::vector(vec![0.5, -0.8, 0.25])),
    ];
    let report = grad_check(&chain, 1e-5, |tape, ids| {
        let y = tape.matmul(ids[0], ids[1])?;
        let t = tape.tanh(y)?;
        let s = tape.sigmoid(t)?;
        let sq = tape.square(s)?;
        tape.sum(sq)
    })?;
    failed |= !report.passes(1e-4);
    println!(
        "saturating-chain: max relative error {:.3e} [{}]",
        report.max_rel_err(),
        if report.passes(1e-4) { "pass" } else { "FAIL" }
    );

    let split = vec![
        ("live".to_string(), Tensor::vector(vec![0.4, 0.6])),
        ("frozen".to_string(), Tensor::vector(vec![1.0, -1.0])),
    ];
    let report = grad_check(&split, 1e-5, |tape, ids| {
        let sg = tape.stop_gradient(ids[1]);
        let sum = tape.add(ids[0], sg)?;
        let sq = tape.square(sum)?;
        tape.sum(sq)
    })?;
    failed |= !report.passes(1e-4) || report.frozen_names() != vec!["frozen"];
    println!(
        "stop-gradient-split: max relative error {:.3e}, frozen {:?} [{}]",
        report.max_rel_err(),
        report.frozen_names(),
        if report.passes(1e-4) { "pass" } else { "FAIL" }
    );

    if failed {
        bail!("gradient checks failed");
    }
    println!("all gradient checks passed (tolerance 1e-4, h = 1e-5, f64)");
    Ok(())
}

fn print_task_tables() {
    println!(
        "{:<26} {:<22} {:<34} {:<8} {}",
        "family", "level", "scale", "actions", "stimulus pool"
    );
    for family in Family::ALL {
        for level in Level::ALL {
            let scales = scale_options(family, level);
            let scale_str = scales
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join("/");
            let pool = stimulus_pool(family, level);
            let pool_str = if pool.is_empty() {
                family.stimulus_label().to_string()
            } else {
                format!(
                    "{} ids in {}..={}",
                    pool.len(),
                    pool.iter().min().unwrap(),
                    pool.iter().max().unwrap()
                )
            };
            println!(
                "{:<26} {:<22} {:<34} {:<8} {}",
                family.name(),
                level.name(),
                format!("{} = {}", family.scale_label(), scale_str),
                family.num_actions(),
                pool_str
            );
        }
    }
}

fn play(args: PlayArgs) -> Result<()> {
    use rand::Rng;
    use rand::SeedableRng;
    let family = Family::parse(&args.family)?;
    let level = Level::parse(&args.level)?;
    let overrides = TaskOverrides {
        trials: (args.trials > 0).then_some(args.trials),
        instance: 0,
    };
    let mut env = make_task_with(family, level, args.seed, overrides);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed ^ 0xF00D);
    println!("episode,trial,step,reward,time_to_goal");
    for episode in 0..args.episodes {
        env.reset();
        let mut step = 0u64;
        loop {
            let action = match args.policy.as_str() {
                "oracle" => env.oracle_action(),
                "random" => rng.random_range(0..env.num_actions()),
                other => bail!("unknown policy {other:?} (oracle|random)"),
            };
            let r = env.step(action)?;
            step += 1;
            if r.reward != 0.0 || r.done {
                let trial = r.info.get("trial").copied().unwrap_or(-1.0);
                let ttg = r
                    .info
                    .get("time_to_goal")
                    .map(|v| v.to_string())
                    .unwrap_or_default();
                println!("{episode},{trial},{step},{},{ttg}", r.reward);
            }
            if r.done {
                break;
            }
        }
    }
    Ok(())
}
