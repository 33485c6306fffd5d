//! Hyper-parameter bundles: a small desk-scale profile (the default) and
//! the published full-scale table, selectable per family.

use crate::auxloss::{CpcConfig, RecConfig};
use crate::controller::NetDims;
use crate::epmem::MemoryConfig;
use crate::learner::LearnerConfig;
use crate::optim::{OptimKind, OptimizerConfig};
use crate::tasks::Family;
use crate::vtrace::VTraceConfig;

/// Everything the training loop needs besides the ablation choice.
#[derive(Debug, Clone, Copy)]
pub struct Hypers {
    pub dims: NetDims,
    pub memory: MemoryConfig,
    pub cpc: CpcConfig,
    pub rec: RecConfig,
    pub optimizer: OptimizerConfig,
    pub learner: LearnerConfig,
    pub unroll: usize,
    pub batch: usize,
}

/// Desk-scale defaults: small widths, a faster learning rate, and short
/// unrolls so a run fits a single-machine budget. Discounts, costs, and
/// memory constants keep their published per-family values.
pub fn desk_hypers(family: Family) -> Hypers {
    let paper = paper_hypers(family);
    let trial_family = !family.is_grid();
    Hypers {
        dims: NetDims {
            embed: 64,
            hidden: 128,
            enc_hidden: 64,
            num_actions: family.num_actions(),
        },
        memory: MemoryConfig {
            capacity: family.memory_capacity(),
            ..MemoryConfig::default()
        },
        cpc: CpcConfig {
            steps: if trial_family { 10 } else { 19 },
            weight: paper.cpc.weight,
        },
        rec: paper.rec,
        optimizer: OptimizerConfig {
            kind: OptimKind::Adam,
            learning_rate: 1e-3,
            ..OptimizerConfig::default()
        },
        learner: paper.learner,
        unroll: if trial_family { 20 } else { 40 },
        batch: 16,
    }
}

/// The published per-family table: hidden size, baseline/entropy costs,
/// batch, unroll, discount, optimizer, learning rate, CPC steps/weight.
pub fn paper_hypers(family: Family) -> Hypers {
    use Family::*;
    // (hidden, baseline, entropy, batch, unroll, gamma, adam?, lr, cpc_n, cpc_w)
    let row: (usize, f64, f64, usize, usize, f64, bool, f64, usize, f64) = match family {
        Avm => (512, 0.5, 0.0052, 16, 50, 0.98, true, 1e-5, 10, 10.0),
        ContinuousRecognition => (1024, 0.5, 0.01, 16, 50, 0.98, true, 1e-5, 10, 10.0),
        ChangeDetection => (512, 0.5, 0.01, 16, 50, 0.98, true, 1e-5, 10, 10.0),
        WhatThenWhere => (1024, 2.0, 0.01, 32, 100, 0.98, true, 1e-5, 10, 30.0),
        SpotDiffBasic => (1024, 0.5, 0.003, 16, 200, 0.99, false, 1e-4, 50, 20.0),
        SpotDiffPassive => (1024, 0.5, 0.003, 16, 200, 0.999, false, 1e-4, 50, 20.0),
        SpotDiffMultiObject => (1024, 0.5, 0.003, 16, 200, 0.99, false, 1e-4, 50, 20.0),
        SpotDiffMotion => (1024, 0.5, 0.003, 16, 200, 0.99, false, 1e-4, 50, 20.0),
        VisibleGoalProceduralMaze => (512, 0.5, 0.0052, 16, 50, 0.98, true, 1e-5, 10, 5.0),
        VisibleGoalWithBuildings => (1024, 0.5, 0.003, 16, 200, 0.99, false, 1e-4, 50, 20.0),
        InvisibleGoalWithBuildings => (1024, 0.5, 0.003, 16, 200, 0.99, false, 1e-4, 50, 20.0),
        InvisibleGoalEmptyArena => (1024, 0.5, 0.003, 16, 200, 0.99, false, 1e-4, 50, 20.0),
        TransitiveInference => (1024, 0.5, 0.003, 16, 200, 0.98, true, 1e-4, 50, 20.0),
    };
    let (hidden, baseline, entropy, batch, unroll, gamma, adam, lr, cpc_n, cpc_w) = row;
    // Reconstruction costs are 1.0 everywhere except the per-task image
    // exceptions (AVM 30, Continuous Recognition 1.5, Change Detection 3).
    let c_image = match family {
        Avm => 30.0,
        ContinuousRecognition => 1.5,
        ChangeDetection => 3.0,
        _ => 1.0,
    };
    Hypers {
        dims: NetDims {
            embed: 256,
            hidden,
            enc_hidden: 256,
            num_actions: family.num_actions(),
        },
        memory: MemoryConfig {
            capacity: family.memory_capacity(),
            ..MemoryConfig::default()
        },
        cpc: CpcConfig {
            steps: cpc_n,
            weight: cpc_w,
        },
        rec: RecConfig {
            c_image,
            c_action: 1.0,
            c_reward: 1.0,
        },
        optimizer: OptimizerConfig {
            kind: if adam { OptimKind::Adam } else { OptimKind::RmsProp },
            learning_rate: lr,
            ..OptimizerConfig::default()
        },
        learner: LearnerConfig {
            vtrace: VTraceConfig {
                gamma,
                ..VTraceConfig::default()
            },
            entropy_cost: entropy,
            baseline_cost: baseline,
            check_finite: true,
        },
        unroll,
        batch,
    }
}
