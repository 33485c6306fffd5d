//! Episodic-memory reinforcement learning testbed.
//!
//! The crate is organized around seven subsystems:
//! - [`tape`] / [`tensor`] / [`gradcheck`]: dense tensors with a
//!   define-by-run reverse-mode tape and finite-difference verification.
//! - [`controller`]: observation encoders, feedforward/LSTM working-memory
//!   cores, and policy/value heads.
//! - [`epmem`]: the slot-based episodic key-value memory with detached
//!   writes and k-nearest-neighbor reads.
//! - [`auxloss`]: contrastive-predictive and reconstruction auxiliary
//!   losses.
//! - [`learner`] / [`vtrace`] / [`optim`]: V-trace off-policy actor-critic
//!   training.
//! - [`tasks`]: thirteen symbolic/grid task families, each with a
//!   scale-and-stimulus train/holdout split plus scripted oracle and
//!   random baselines.
//! - [`harness`]: the ablation matrix, score pipeline, and report emission.

pub mod agent;
pub mod auxloss;
pub mod checkpoint;
pub mod config;
pub mod controller;
pub mod epmem;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod learner;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tasks;
pub mod tensor;
pub mod vtrace;

pub use error::{Error, Result};
pub use tape::{NodeId, Tape};
pub use tensor::{Dtype, Scalar, Tensor};
