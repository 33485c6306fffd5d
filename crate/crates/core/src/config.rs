//! Flat key=value configuration files with one section per module.
//!
//! Lines are `key = value`, `[section]` headers, blank lines, or `#`
//! comments. Unknown sections or keys are errors. Every key is documented
//! in [`document`]; unset keys keep the profile defaults.

use crate::agent::AuxKind;
use crate::error::{Error, Result};
use crate::harness::{desk_hypers, paper_hypers, RunSettings};
use crate::optim::OptimKind;
use crate::tasks::Family;

#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    // [harness]
    pub profile: Option<String>,
    pub budget: Option<u64>,
    pub eval_every: Option<u64>,
    pub eval_episodes: Option<usize>,
    pub early_stop_patience: Option<u64>,
    pub checkpoint_every: Option<u64>,
    pub mem_trace: Option<bool>,
    // [controller]
    pub embed: Option<usize>,
    pub hidden: Option<usize>,
    pub enc_hidden: Option<usize>,
    // [epmem]
    pub capacity: Option<usize>,
    pub neighbors: Option<usize>,
    pub epsilon: Option<f64>,
    pub key_width: Option<usize>,
    // [auxloss]
    pub cpc_steps: Option<usize>,
    pub cpc_weight: Option<f64>,
    pub rec_image: Option<f64>,
    pub rec_action: Option<f64>,
    pub rec_reward: Option<f64>,
    // [learner]
    pub optimizer: Option<OptimKind>,
    pub learning_rate: Option<f64>,
    pub gamma: Option<f64>,
    pub rho_bar: Option<f64>,
    pub c_bar: Option<f64>,
    pub entropy_cost: Option<f64>,
    pub baseline_cost: Option<f64>,
    pub grad_clip: Option<f64>,
    pub unroll: Option<usize>,
    pub batch: Option<usize>,
    // [taskforge]
    pub trials: Option<usize>,
}

/// One line per key: section, name, meaning.
pub fn document() -> String {
    let rows: &[(&str, &str, &str)] = &[
        ("harness", "profile", "hyper-parameter profile: desk (default) or paper"),
        ("harness", "budget", "learner-step cap per run"),
        ("harness", "eval_every", "learner steps between frozen-parameter holdout evaluations"),
        ("harness", "eval_episodes", "episodes per holdout evaluation"),
        ("harness", "early_stop_patience", "stop after this many steps without a new best train window (0 = never)"),
        ("harness", "checkpoint_every", "extra checkpoint cadence in learner steps (0 = final only)"),
        ("harness", "mem_trace", "true to dump per-episode memory read diagnostics from actor 0"),
        ("controller", "embed", "embedding width x_t"),
        ("controller", "hidden", "working-memory width h_t"),
        ("controller", "enc_hidden", "encoder hidden layer width"),
        ("epmem", "capacity", "memory slots (0 = family default: 2048 grid, 1024 symbolic)"),
        ("epmem", "neighbors", "k-nearest neighbors per read"),
        ("epmem", "epsilon", "inverse-distance weighting epsilon"),
        ("epmem", "key_width", "key and query width"),
        ("auxloss", "cpc_steps", "number of contrastive predictive offsets"),
        ("auxloss", "cpc_weight", "contrastive loss multiplier"),
        ("auxloss", "rec_image", "reconstruction cost for observations"),
        ("auxloss", "rec_action", "reconstruction cost for previous actions"),
        ("auxloss", "rec_reward", "reconstruction cost for previous rewards"),
        ("learner", "optimizer", "adam or rmsprop"),
        ("learner", "learning_rate", "optimizer step size"),
        ("learner", "gamma", "discount factor in [0, 1)"),
        ("learner", "rho_bar", "importance-weight clip for targets (>= 1)"),
        ("learner", "c_bar", "importance-weight clip for traces (>= 1, <= rho_bar)"),
        ("learner", "entropy_cost", "entropy bonus weight"),
        ("learner", "baseline_cost", "value-regression weight"),
        ("learner", "grad_clip", "global gradient-norm clip (0 = off)"),
        ("learner", "unroll", "trajectory unroll length"),
        ("learner", "batch", "trajectories per learner step"),
        ("taskforge", "trials", "override trials per episode for the trial-structured families (0 = published tables)"),
    ];
    let mut out = String::from("configuration keys (key = value, sections per module):\n");
    let mut section = "";
    for (s, k, d) in rows {
        if *s != section {
            out.push_str(&format!("\n[{s}]\n"));
            section = s;
        }
        out.push_str(&format!("  {k:<22} {d}\n"));
    }
    out
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<FileConfig> {
        let mut cfg = FileConfig::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {}: bad section header", lineno + 1)))?;
                section = name.trim().to_string();
                if !["harness", "controller", "epmem", "auxloss", "learner", "taskforge"]
                    .contains(&section.as_str())
                {
                    return Err(Error::Config(format!(
                        "line {}: unknown section [{section}]",
                        lineno + 1
                    )));
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.set(&section, key, value).map_err(|e| {
                Error::Config(format!("line {}: {e}", lineno + 1))
            })?;
        }
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| Error::Config(format!("{key}: {e}")))
        }
        match (section, key) {
            ("harness", "profile") => {
                if value != "desk" && value != "paper" {
                    return Err(Error::Config(format!("unknown profile {value:?}")));
                }
                self.profile = Some(value.to_string());
            }
            ("harness", "budget") => self.budget = Some(num(key, value)?),
            ("harness", "eval_every") => self.eval_every = Some(num(key, value)?),
            ("harness", "eval_episodes") => self.eval_episodes = Some(num(key, value)?),
            ("harness", "early_stop_patience") => {
                self.early_stop_patience = Some(num(key, value)?)
            }
            ("harness", "checkpoint_every") => self.checkpoint_every = Some(num(key, value)?),
            ("harness", "mem_trace") => self.mem_trace = Some(num(key, value)?),
            ("controller", "embed") => self.embed = Some(num(key, value)?),
            ("controller", "hidden") => self.hidden = Some(num(key, value)?),
            ("controller", "enc_hidden") => self.enc_hidden = Some(num(key, value)?),
            ("epmem", "capacity") => self.capacity = Some(num(key, value)?),
            ("epmem", "neighbors") => self.neighbors = Some(num(key, value)?),
            ("epmem", "epsilon") => self.epsilon = Some(num(key, value)?),
            ("epmem", "key_width") => self.key_width = Some(num(key, value)?),
            ("auxloss", "cpc_steps") => self.cpc_steps = Some(num(key, value)?),
            ("auxloss", "cpc_weight") => self.cpc_weight = Some(num(key, value)?),
            ("auxloss", "rec_image") => self.rec_image = Some(num(key, value)?),
            ("auxloss", "rec_action") => self.rec_action = Some(num(key, value)?),
            ("auxloss", "rec_reward") => self.rec_reward = Some(num(key, value)?),
            ("learner", "optimizer") => {
                self.optimizer = Some(match value {
                    "adam" => OptimKind::Adam,
                    "rmsprop" => OptimKind::RmsProp,
                    other => {
                        return Err(Error::Config(format!("unknown optimizer {other:?}")))
                    }
                })
            }
            ("learner", "learning_rate") => self.learning_rate = Some(num(key, value)?),
            ("learner", "gamma") => self.gamma = Some(num(key, value)?),
            ("learner", "rho_bar") => self.rho_bar = Some(num(key, value)?),
            ("learner", "c_bar") => self.c_bar = Some(num(key, value)?),
            ("learner", "entropy_cost") => self.entropy_cost = Some(num(key, value)?),
            ("learner", "baseline_cost") => self.baseline_cost = Some(num(key, value)?),
            ("learner", "grad_clip") => self.grad_clip = Some(num(key, value)?),
            ("learner", "unroll") => self.unroll = Some(num(key, value)?),
            ("learner", "batch") => self.batch = Some(num(key, value)?),
            ("taskforge", "trials") => self.trials = Some(num(key, value)?),
            _ => {
                return Err(Error::Config(format!(
                    "unknown key {key:?} in section [{section}]"
                )))
            }
        }
        Ok(())
    }

    /// Materialize run settings for a family: profile defaults overlaid
    /// with the file's explicit keys.
    pub fn to_settings(&self, family: Family, default_budget: u64) -> Result<RunSettings> {
        let hypers = match self.profile.as_deref() {
            None | Some("desk") => desk_hypers(family),
            Some("paper") => paper_hypers(family),
            Some(other) => return Err(Error::Config(format!("unknown profile {other:?}"))),
        };
        let mut s = RunSettings::new(hypers, self.budget.unwrap_or(default_budget));
        if let Some(v) = self.eval_every {
            s.eval_every = v.max(1);
        }
        if let Some(v) = self.eval_episodes {
            s.eval_episodes = v.max(1);
        }
        if let Some(v) = self.early_stop_patience {
            s.early_stop_patience = (v > 0).then_some(v);
        }
        if let Some(v) = self.checkpoint_every {
            s.checkpoint_every = (v > 0).then_some(v);
        }
        if let Some(v) = self.mem_trace {
            s.mem_trace = v;
        }
        if let Some(v) = self.embed {
            s.hypers.dims.embed = v;
        }
        if let Some(v) = self.hidden {
            s.hypers.dims.hidden = v;
        }
        if let Some(v) = self.enc_hidden {
            s.hypers.dims.enc_hidden = v;
        }
        if let Some(v) = self.capacity {
            if v > 0 {
                s.hypers.memory.capacity = v;
            }
        }
        if let Some(v) = self.neighbors {
            s.hypers.memory.neighbors = v;
        }
        if let Some(v) = self.epsilon {
            s.hypers.memory.epsilon = v;
        }
        if let Some(v) = self.key_width {
            s.hypers.memory.key_width = v;
        }
        if let Some(v) = self.cpc_steps {
            s.hypers.cpc.steps = v;
        }
        if let Some(v) = self.cpc_weight {
            s.hypers.cpc.weight = v;
        }
        if let Some(v) = self.rec_image {
            s.hypers.rec.c_image = v;
        }
        if let Some(v) = self.rec_action {
            s.hypers.rec.c_action = v;
        }
        if let Some(v) = self.rec_reward {
            s.hypers.rec.c_reward = v;
        }
        if let Some(v) = self.optimizer {
            s.hypers.optimizer.kind = v;
        }
        if let Some(v) = self.learning_rate {
            s.hypers.optimizer.learning_rate = v;
        }
        if let Some(v) = self.grad_clip {
            s.hypers.optimizer.grad_clip = (v > 0.0).then_some(v);
        }
        if let Some(v) = self.gamma {
            s.hypers.learner.vtrace.gamma = v;
        }
        if let Some(v) = self.rho_bar {
            s.hypers.learner.vtrace.rho_bar = v;
        }
        if let Some(v) = self.c_bar {
            s.hypers.learner.vtrace.c_bar = v;
        }
        if let Some(v) = self.entropy_cost {
            s.hypers.learner.entropy_cost = v;
        }
        if let Some(v) = self.baseline_cost {
            s.hypers.learner.baseline_cost = v;
        }
        if let Some(v) = self.unroll {
            s.hypers.unroll = v;
        }
        if let Some(v) = self.batch {
            s.hypers.batch = v;
        }
        if let Some(v) = self.trials {
            s.overrides.trials = (v > 0).then_some(v);
        }
        s.hypers.learner.vtrace.validate()?;
        Ok(s)
    }
}

/// Auxiliary kind as spelled in CLI arguments.
pub fn parse_aux(s: &str) -> Result<AuxKind> {
    match s {
        "none" => Ok(AuxKind::None),
        "cpc" => Ok(AuxKind::Cpc),
        "rec" => Ok(AuxKind::Rec),
        other => Err(Error::Config(format!("unknown aux loss {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_applies_overrides() {
        let text = "\
# comment
[harness]
budget = 500
eval_every = 50
mem_trace = true

[controller]
hidden = 32

[learner]
optimizer = rmsprop
gamma = 0.95
unroll = 12

[taskforge]
trials = 10
";
        let cfg = FileConfig::parse(text).unwrap();
        let s = cfg.to_settings(Family::Avm, 1000).unwrap();
        assert_eq!(s.budget, 500);
        assert_eq!(s.eval_every, 50);
        assert!(s.mem_trace);
        assert_eq!(s.hypers.dims.hidden, 32);
        assert_eq!(s.hypers.optimizer.kind, OptimKind::RmsProp);
        assert_eq!(s.hypers.learner.vtrace.gamma, 0.95);
        assert_eq!(s.hypers.unroll, 12);
        assert_eq!(s.overrides.trials, Some(10));
    }

    #[test]
    fn unknown_keys_and_sections_are_errors() {
        assert!(FileConfig::parse("[nope]\n").is_err());
        assert!(FileConfig::parse("[learner]\nwat = 3\n").is_err());
        assert!(FileConfig::parse("[learner]\ngamma 0.9\n").is_err());
    }

    #[test]
    fn paper_profile_selects_published_hypers() {
        let cfg = FileConfig::parse("[harness]\nprofile = paper\n").unwrap();
        let s = cfg.to_settings(Family::SpotDiffBasic, 10).unwrap();
        assert_eq!(s.hypers.dims.hidden, 1024);
        assert_eq!(s.hypers.unroll, 200);
        assert_eq!(s.hypers.optimizer.kind, OptimKind::RmsProp);
    }

    #[test]
    fn every_documented_key_round_trips() {
        // Feed each documented key through the parser with a benign value.
        for line in document().lines() {
            let line = line.trim();
            if line.starts_with('[') {
                continue;
            }
            let Some(key) = line.split_whitespace().next() else {
                continue;
            };
            if key.is_empty() || key == "configuration" {
                continue;
            }
            let section = match key {
                "profile" | "budget" | "eval_every" | "eval_episodes" | "early_stop_patience"
                | "checkpoint_every" | "mem_trace" => "harness",
                "embed" | "hidden" | "enc_hidden" => "controller",
                "capacity" | "neighbors" | "epsilon" | "key_width" => "epmem",
                k if k.starts_with("cpc_") || k.starts_with("rec_") => "auxloss",
                "trials" => "taskforge",
                _ => "learner",
            };
            let value = match key {
                "profile" => "paper",
                "optimizer" => "adam",
                "mem_trace" => "true",
                "gamma" => "0.9",
                "epsilon" | "learning_rate" => "0.001",
                _ => "2",
            };
            let text = format!("[{section}]\n{key} = {value}\n");
            FileConfig::parse(&text).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }
}
