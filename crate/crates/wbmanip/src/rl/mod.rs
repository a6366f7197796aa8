//! From-scratch soft actor-critic: MLPs with manual backprop, replay buffer,
//! squashed-Gaussian policy, twin critics, and the training/evaluation loops.

pub mod checkpoint;
pub mod mlp;
pub mod policy;
pub mod replay;
pub mod sac;
pub mod train;

pub use mlp::{Adam, Linear, Mlp};
pub use policy::{sample_action, PolicyNet};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use sac::{LossReport, SacAgent, SacHyperparams};
pub use train::{evaluate, train, CurvePoint, EvalSummary, TrainOutcome, TrainSetup};
