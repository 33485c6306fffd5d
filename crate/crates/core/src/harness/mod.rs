//! Experiment orchestration: score pipeline, hyper-parameter profiles,
//! the ablation matrix runner, and report emission.
//!
//! The normalized score follows a fixed per-seed procedure: smooth the
//! training episode-reward curve with an EWMA, take a rolling mean over a
//! window of 10 episodes, find the highest window over training, use its
//! step as the snapshot point, read the holdout evaluation values at that
//! snapshot, then map rewards through
//! (R - R_random) / (R_oracle - R_random) * 100 so 0 is random play and
//! 100 is the scripted oracle. Scores aggregate as mean +- standard error
//! over seeds.

mod hypers;
mod run;

pub use hypers::{desk_hypers, paper_hypers, Hypers};
pub use run::{enumerate_runs, estimate_anchors};
pub use run::{run_matrix, run_single, RunOutcome, RunSettings, SampledTrainEnv};

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tasks::{mean_stderr, Family};

/// s_0 = x_0; s_t = alpha x_t + (1 - alpha) s_{t-1}.
pub fn ewma(series: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::contract("ewma of empty series"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::contract(format!("ewma alpha {alpha} outside (0, 1]")));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut s = series[0];
    out.push(s);
    for &x in &series[1..] {
        s = alpha * x + (1.0 - alpha) * s;
        out.push(s);
    }
    Ok(out)
}

/// Trailing mean over up to `window` entries (partial at the start).
pub fn rolling_mean(series: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for i in 0..series.len() {
        sum += series[i];
        if i >= window {
            sum -= series[i - window];
        }
        out.push(sum / window.min(i + 1) as f64);
    }
    out
}

/// Training and holdout evaluation curves for one seed. Train entries are
/// (learner step, completed-episode reward); holdout entries are (learner
/// step, mean reward over the evaluation episodes at that checkpoint).
#[derive(Debug, Clone, Default)]
pub struct SeedCurves {
    pub train: Vec<(u64, f64)>,
    pub holdout_interp: Vec<(u64, f64)>,
    pub holdout_extrap: Vec<(u64, f64)>,
}

/// Per-seed reward curves plus metadata for one (config, family) run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: String,
    pub family: Family,
    pub seeds: Vec<u64>,
    pub curves: Vec<SeedCurves>,
    pub learner_steps: u64,
    pub wallclock_secs: f64,
}

impl RunRecord {
    fn validate(&self) -> Result<()> {
        if self.curves.is_empty() || self.seeds.len() != self.curves.len() {
            return Err(Error::contract("run record seed/curve count mismatch"));
        }
        for c in &self.curves {
            if c.train.is_empty() {
                return Err(Error::contract("empty training curve"));
            }
            for series in [&c.train, &c.holdout_interp, &c.holdout_extrap] {
                if series.windows(2).any(|w| w[0].0 > w[1].0) {
                    return Err(Error::contract("curve steps must be monotone"));
                }
            }
        }
        Ok(())
    }
}

/// Reward anchors per level: (R_random, R_oracle).
#[derive(Debug, Clone, Copy)]
pub struct LevelAnchors {
    pub train: (f64, f64),
    pub interp: (f64, f64),
    pub extrap: (f64, f64),
}

impl LevelAnchors {
    pub fn validate(&self) -> Result<()> {
        for (r, o) in [self.train, self.interp, self.extrap] {
            if o <= r {
                return Err(Error::contract(format!(
                    "oracle reward {o} must exceed random reward {r}"
                )));
            }
        }
        Ok(())
    }
}

/// One report row: oracle-normalized scores (mean, stderr over seeds) for
/// train and both holdout levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub config: String,
    pub family: String,
    pub train: (f64, f64),
    pub interp: (f64, f64),
    pub extrap: (f64, f64),
}

pub fn normalize(r: f64, random: f64, oracle: f64) -> f64 {
    (r - random) / (oracle - random) * 100.0
}

/// Holdout curve value at the train-max snapshot: the latest evaluation
/// checkpoint at or before the snapshot step (the first checkpoint when
/// none precedes it). Empty curves score as random.
fn holdout_at_snapshot(curve: &[(u64, f64)], snapshot: u64, random: f64) -> f64 {
    if curve.is_empty() {
        return random;
    }
    let mut value = curve[0].1;
    for &(step, v) in curve {
        if step <= snapshot {
            value = v;
        } else {
            break;
        }
    }
    value
}

/// The per-seed score pipeline; see the module docs for the procedure.
pub fn normalized_score(
    record: &RunRecord,
    anchors: &LevelAnchors,
    alpha: f64,
) -> Result<ScoreRow> {
    record.validate()?;
    anchors.validate()?;
    let mut train_scores = Vec::new();
    let mut interp_scores = Vec::new();
    let mut extrap_scores = Vec::new();
    for curves in &record.curves {
        let rewards: Vec<f64> = curves.train.iter().map(|&(_, r)| r).collect();
        let smoothed = ewma(&rewards, alpha)?;
        let windows = rolling_mean(&smoothed, 10);
        let (best_idx, best) = windows
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            });
        let snapshot = curves.train[best_idx].0;
        train_scores.push(normalize(best, anchors.train.0, anchors.train.1));
        let ri = holdout_at_snapshot(&curves.holdout_interp, snapshot, anchors.interp.0);
        interp_scores.push(normalize(ri, anchors.interp.0, anchors.interp.1));
        let re = holdout_at_snapshot(&curves.holdout_extrap, snapshot, anchors.extrap.0);
        extrap_scores.push(normalize(re, anchors.extrap.0, anchors.extrap.1));
    }
    Ok(ScoreRow {
        config: record.config.clone(),
        family: record.family.name().to_string(),
        train: mean_stderr(&train_scores),
        interp: mean_stderr(&interp_scores),
        extrap: mean_stderr(&extrap_scores),
    })
}

const LEVEL_COLUMNS: [&str; 3] = ["train", "holdout-interpolate", "holdout-extrapolate"];

fn row_level(row: &ScoreRow, level: &str) -> (f64, f64) {
    match level {
        "train" => row.train,
        "holdout-interpolate" => row.interp,
        "holdout-extrapolate" => row.extrap,
        _ => unreachable!(),
    }
}

/// Long-form CSV: config, family, level, score, stderr.
pub fn report_csv(rows: &[ScoreRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::contract("empty score report"));
    }
    let mut out = String::from("config,family,level,score,stderr\n");
    for row in rows {
        for level in LEVEL_COLUMNS {
            let (score, stderr) = row_level(row, level);
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6}\n",
                row.config, row.family, level, score, stderr
            ));
        }
    }
    Ok(out)
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ScoreRow>> {
    let mut rows: Vec<ScoreRow> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(Error::contract(format!("bad report line {i}: {line:?}")));
        }
        let (config, family, level) = (parts[0], parts[1], parts[2]);
        let score: f64 = parts[3]
            .parse()
            .map_err(|e| Error::contract(format!("bad score on line {i}: {e}")))?;
        let stderr: f64 = parts[4]
            .parse()
            .map_err(|e| Error::contract(format!("bad stderr on line {i}: {e}")))?;
        let row = match rows
            .iter_mut()
            .find(|r| r.config == config && r.family == family)
        {
            Some(r) => r,
            None => {
                rows.push(ScoreRow {
                    config: config.to_string(),
                    family: family.to_string(),
                    train: (0.0, 0.0),
                    interp: (0.0, 0.0),
                    extrap: (0.0, 0.0),
                });
                rows.last_mut().expect("just pushed")
            }
        };
        match level {
            "train" => row.train = (score, stderr),
            "holdout-interpolate" => row.interp = (score, stderr),
            "holdout-extrapolate" => row.extrap = (score, stderr),
            other => return Err(Error::contract(format!("unknown level {other:?}"))),
        }
    }
    if rows.is_empty() {
        return Err(Error::contract("report csv had no data rows"));
    }
    Ok(rows)
}

/// Model and task orderings for the heatmap: highest mean train score
/// first.
fn sort_orders(rows: &[ScoreRow]) -> (Vec<String>, Vec<String>) {
    let mut configs: Vec<String> = rows.iter().map(|r| r.config.clone()).collect();
    configs.sort();
    configs.dedup();
    let mut families: Vec<String> = rows.iter().map(|r| r.family.clone()).collect();
    families.sort();
    families.dedup();
    let mean_for = |pred: &dyn Fn(&ScoreRow) -> bool| -> f64 {
        let vals: Vec<f64> = rows.iter().filter(|r| pred(r)).map(|r| r.train.0).collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    };
    let mut config_means: Vec<(String, f64)> = configs
        .into_iter()
        .map(|c| {
            let m = mean_for(&|r: &ScoreRow| r.config == c);
            (c, m)
        })
        .collect();
    config_means.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0)));
    let mut family_means: Vec<(String, f64)> = families
        .into_iter()
        .map(|f| {
            let m = mean_for(&|r: &ScoreRow| r.family == f);
            (f, m)
        })
        .collect();
    family_means.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0)));
    (
        config_means.into_iter().map(|(c, _)| c).collect(),
        family_means.into_iter().map(|(f, _)| f).collect(),
    )
}

/// Plain-text heatmap blocks (one per level), models as rows and tasks as
/// columns, both sorted by descending mean train score.
pub fn heatmap_text(rows: &[ScoreRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::contract("empty score report"));
    }
    let (configs, families) = sort_orders(rows);
    let mut out = String::new();
    out.push_str("oracle-normalized scores (0 = random, 100 = oracle)\n");
    for level in LEVEL_COLUMNS {
        out.push_str(&format!("\n== {level} ==\n"));
        out.push_str(&format!("{:<24}", "model"));
        for f in &families {
            out.push_str(&format!("{f:>26}"));
        }
        out.push('\n');
        for c in &configs {
            out.push_str(&format!("{c:<24}"));
            for f in &families {
                match rows.iter().find(|r| &r.config == c && &r.family == f) {
                    Some(r) => {
                        let (score, _) = row_level(r, level);
                        out.push_str(&format!("{score:>26.1}"));
                    }
                    None => out.push_str(&format!("{:>26}", "-")),
                }
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Write report.csv, heatmap.txt, and a per-run manifest into `dir`.
pub fn emit_report(rows: &[ScoreRow], records: &[RunRecord], dir: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::contract("refusing to emit an empty report"));
    }
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.csv"), report_csv(rows)?)?;
    fs::write(dir.join("heatmap.txt"), heatmap_text(rows)?)?;
    let mut manifest = String::from("config,family,seeds,learner_steps,wallclock_secs\n");
    for rec in records {
        let seeds: Vec<String> = rec.seeds.iter().map(|s| s.to_string()).collect();
        manifest.push_str(&format!(
            "{},{},{},{},{:.1}\n",
            rec.config,
            rec.family.name(),
            seeds.join(";"),
            rec.learner_steps,
            rec.wallclock_secs
        ));
    }
    fs::write(dir.join("manifest.csv"), manifest)?;
    Ok(())
}
