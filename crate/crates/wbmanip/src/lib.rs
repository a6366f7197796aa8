//! Decoupled drawer-opening manipulation stack: a floating 6-DoF gripper
//! learns the skill with soft actor-critic, and an 11-DoF mobile manipulator
//! executes the learned end-effector trajectory through a singularity-aware
//! QP whole-body controller.

pub mod controller;
pub mod env;
#[path = "harness/mod.rs"]
pub mod harness;
pub mod ik;
pub mod kinematics;
pub mod qp;
#[path = "rl/mod.rs"]
pub mod rl;
