//! On-policy policy-gradient reinforcement learning with three objectives
//! under one training loop: vanilla policy gradient (VPG), the clipped
//! surrogate of PPO, and PPG, which clips the log-probability difference
//! depending on the sign of the advantage.
//!
//! Networks are small tanh MLPs with hand-written backpropagation; batch
//! evaluation runs on rayon when the `parallel` feature is enabled.

pub mod baseline;
pub mod checkpoint;
pub mod config;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod math;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod rollout;
pub mod trainer;

pub use config::TrainConfig;
pub use error::{Error, Result};
pub use objectives::{Algo, ObjectiveKind, ObjectiveReport};
pub use trainer::{train, EpochRecord, TrainOutcome};
