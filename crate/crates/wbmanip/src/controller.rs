//! Singularity-aware whole-body controller.
//!
//! Per control step: predict where the learned hand policy wants the EE in k
//! steps, probe whether the arm alone can get there (locked-base IK), weight
//! base vs arm joints accordingly, and solve a box-constrained QP for joint
//! velocities that realize the desired EE twist. Joint velocities never
//! exceed their limits by construction; near singularities the equality
//! constraint is relaxed into a penalty instead of letting velocities blow
//! up the way an unweighted pseudoinverse does.

use crate::env::{hand_q_for_pose, observe, Action, AgentMode, Env};
use crate::ik::{solve_ik, IkOptions};
use crate::kinematics::{pose_error, KinematicChain, Pose};
use crate::qp::{solve_qp, solve_qp_relaxed, QpProblem, QpStatus};
use crate::rl::policy::{sample_action, PolicyNet};
use nalgebra::{DMatrix, DVector, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("qp solve failed even after relaxation: {0}")]
    QpFailed(String),
    #[error("kinematics error: {0}")]
    Kinematics(#[from] crate::kinematics::KinematicsError),
    #[error("invalid controller config: {0}")]
    Config(String),
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    /// Probe horizon in control steps.
    pub k: usize,
    /// Weight on the joint group the controller wants to keep still.
    pub omega1: f64,
    /// Weight on the joint group allowed to move.
    pub omega2: f64,
    pub dt: f64,
    /// Per-joint velocity bound (rad/s or m/s).
    pub qdot_max: DVector<f64>,
    pub ik_options: IkOptions,
}

/// Serializable subset of [`ControllerConfig`] used in experiment configs;
/// `qdot_max` is derived from the chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerSettings {
    pub k: usize,
    pub omega1: f64,
    pub omega2: f64,
    pub dt: f64,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        ControllerSettings {
            k: 10,
            omega1: 20.0,
            omega2: 0.1,
            dt: 0.05,
        }
    }
}

impl ControllerConfig {
    pub fn for_chain(chain: &KinematicChain) -> ControllerConfig {
        ControllerConfig::from_settings(&ControllerSettings::default(), chain)
    }

    pub fn from_settings(s: &ControllerSettings, chain: &KinematicChain) -> ControllerConfig {
        let mut ik_options = IkOptions::default();
        ik_options.lock_base = true;
        ControllerConfig {
            k: s.k,
            omega1: s.omega1,
            omega2: s.omega2,
            dt: s.dt,
            qdot_max: chain.velocity_limits(),
            ik_options,
        }
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        if !(self.omega1 > self.omega2 && self.omega2 > 0.0) {
            return Err(ControllerError::Config(format!(
                "need omega1 > omega2 > 0, got {} and {}",
                self.omega1, self.omega2
            )));
        }
        if self.k < 1 {
            return Err(ControllerError::Config("k must be >= 1".into()));
        }
        if self.dt <= 0.0 {
            return Err(ControllerError::Config("dt must be positive".into()));
        }
        if self.qdot_max.iter().any(|&v| v <= 0.0) {
            return Err(ControllerError::Config(
                "qdot_max must be positive element-wise".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ControlStepTrace {
    pub desired_twist: Vector6<f64>,
    pub z_res: bool,
    pub c_base: f64,
    pub c_arm: f64,
    pub qp_status: QpStatus,
    /// True when the equality-relaxed fallback produced qdot_d.
    pub relaxed: bool,
    pub qdot_d: DVector<f64>,
    pub probe_target: Pose,
}

/// Eq. 8: first-order desired EE twist from the pose discrepancy, not from
/// the RL velocity action.
pub fn desired_ee_velocity(x_ee: &Pose, x_h_next: &Pose, dt: f64) -> Vector6<f64> {
    pose_error(x_ee, x_h_next) / dt
}

/// Predict the hand pose k steps ahead by rolling the policy's deterministic
/// action in a private copy of the floating-hand environment.
pub fn rollout_reference(policy: &PolicyNet, hand_env: &Env, k: usize) -> Pose {
    debug_assert_eq!(hand_env.mode, AgentMode::FloatingHand);
    let mut env = hand_env.clone();
    // the rollout is deterministic: no observation noise, mean actions
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..k {
        let obs = observe(&env, 0.0, &mut rng);
        let (flat, _) = sample_action(policy, &obs, &mut rng, true);
        if env.step(&Action::from_flat(&flat)).is_err() {
            break;
        }
    }
    env.ee_pose()
}

/// Eq. 9/10: diagonal C_sg with c_base on the base block and c_arm on the
/// arm block, chosen from the reachability bit.
pub fn build_cost_matrix(z_res: bool, cfg: &ControllerConfig, chain: &KinematicChain) -> DMatrix<f64> {
    let (c_base, c_arm) = cost_weights(z_res, cfg);
    let n = chain.dof();
    DMatrix::from_fn(n, n, |r, c| {
        if r != c {
            0.0
        } else if r < chain.base_joint_count {
            c_base
        } else {
            c_arm
        }
    })
}

pub fn cost_weights(z_res: bool, cfg: &ControllerConfig) -> (f64, f64) {
    let z = if z_res { 1.0 } else { 0.0 };
    let c_base = cfg.omega1 * z + cfg.omega2 * (1.0 - z);
    let c_arm = cfg.omega2 * z + cfg.omega1 * (1.0 - z);
    (c_base, c_arm)
}

/// z_res: can the arm alone (base locked) reach the probe target?
pub fn reachability_probe(
    chain: &KinematicChain,
    q: &DVector<f64>,
    probe_target: &Pose,
    cfg: &ControllerConfig,
) -> bool {
    let mut opts = cfg.ik_options.clone();
    opts.lock_base = true;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a0be);
    match solve_ik(chain, q, probe_target, &opts, &mut rng) {
        Ok(res) => res.reachable,
        Err(_) => false,
    }
}

/// One pass of the Eq. 7-11 pipeline. Solves
/// min q̇ᵀ C_sg q̇  s.t.  J(q) q̇ = ẋ_ee,d,  |q̇| ≤ q̇_max,
/// falling back to the penalty-relaxed QP when the equality is infeasible
/// (e.g. exactly at a singularity with an unreachable twist).
pub fn control_step(
    chain: &KinematicChain,
    q: &DVector<f64>,
    x_h_next: &Pose,
    probe_target: &Pose,
    cfg: &ControllerConfig,
) -> Result<ControlStepTrace, ControllerError> {
    let n = chain.dof();
    let x_ee = chain.forward_kinematics(q)?;
    let twist = desired_ee_velocity(&x_ee, x_h_next, cfg.dt);
    let z_res = reachability_probe(chain, q, probe_target, cfg);
    let (c_base, c_arm) = cost_weights(z_res, cfg);
    let h = build_cost_matrix(z_res, cfg, chain);
    let jac = chain.jacobian(q)?;
    // drop twist rows no joint can influence (reduced chains span < 6 dims);
    // a zero row with nonzero demand is uncontrollable either way
    let rows: Vec<usize> = (0..6).filter(|&r| jac.row(r).amax() > 1e-12).collect();
    let a_eq = DMatrix::from_fn(rows.len(), n, |r, c| jac[(rows[r], c)]);
    let b_eq = DVector::from_fn(rows.len(), |r, _| twist[rows[r]]);
    let problem = QpProblem {
        h,
        a_eq,
        b_eq,
        lb: -cfg.qdot_max.clone(),
        ub: cfg.qdot_max.clone(),
    };

    let solution = solve_qp(&problem, 1e-10, 50 * n.max(6));
    let (mut qdot_d, qp_status, relaxed) = match solution {
        Ok(sol) if sol.status == QpStatus::Optimal => (sol.x, QpStatus::Optimal, false),
        _ => {
            // singular or out-of-reach twist: trade exact tracking for
            // bounded velocities
            let sol = solve_qp_relaxed(&problem, 1e6)
                .map_err(|e| ControllerError::QpFailed(e.to_string()))?;
            (sol.x, sol.status, true)
        }
    };
    // the box is a hard contract; scrub solver-epsilon overshoot
    for i in 0..n {
        qdot_d[i] = qdot_d[i].clamp(-cfg.qdot_max[i], cfg.qdot_max[i]);
    }

    Ok(ControlStepTrace {
        desired_twist: twist,
        z_res,
        c_base,
        c_arm,
        qp_status,
        relaxed,
        qdot_d,
        probe_target: probe_target.clone(),
    })
}

/// Unweighted least-squares baseline q̇ = J⁺ ẋ (SVD pseudoinverse), the
/// Fig. 7 comparison: no weighting, no velocity bounds.
pub fn pseudoinverse_qdot(jac: &DMatrix<f64>, twist: &Vector6<f64>) -> DVector<f64> {
    let pinv = jac
        .clone()
        .svd(true, true)
        .pseudo_inverse(1e-10)
        .expect("svd converges on finite matrices");
    pinv * DVector::from_column_slice(twist.as_slice())
}

#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub success: bool,
    pub steps: usize,
    /// RMS of the EE position tracking error against the reference (m).
    pub tracking_rms: f64,
    pub max_abs_qdot: f64,
    pub relaxed_steps: usize,
    pub traces: Vec<ControlStepTrace>,
}

/// Execute a recorded floating-hand EE trajectory on the robot.
///
/// The robot follows the reference through `control_step`; finger commands
/// come straight from the policy evaluated on a shadow hand environment that
/// rides along the recorded trajectory with the robot's cabinet state.
pub fn execute_on_robot(
    chain: &KinematicChain,
    initial_q: &DVector<f64>,
    hand_trajectory: &[Pose],
    policy: &PolicyNet,
    cfg: &ControllerConfig,
    robot_env: &mut Env,
) -> Result<EpisodeRecord, ControllerError> {
    cfg.validate()?;
    let mut record = EpisodeRecord {
        success: false,
        steps: 0,
        tracking_rms: 0.0,
        max_abs_qdot: 0.0,
        relaxed_steps: 0,
        traces: Vec::new(),
    };
    if hand_trajectory.is_empty() {
        return Ok(record);
    }
    robot_env.state.agent_q = initial_q.clone();

    // shadow hand environment used for policy queries and probe rollouts
    let mut hand_env = Env::reset(
        AgentMode::FloatingHand,
        robot_env.state.cabinet.clone(),
        0,
        robot_env.params.clone(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0);
    let mut sq_err_sum = 0.0;

    for t in 0..hand_trajectory.len() {
        // ride the shadow hand along the recorded trajectory with the
        // robot's live cabinet state
        hand_env.state.agent_q = hand_q_for_pose(&hand_trajectory[t]);
        hand_env.state.drawer_extension = robot_env.state.drawer_extension;
        hand_env.state.drawer_velocity = robot_env.state.drawer_velocity;
        hand_env.state.grasp_attached = robot_env.state.grasp_attached;
        hand_env.state.finger_positions = robot_env.state.finger_positions;
        hand_env.state.finger_velocities = robot_env.state.finger_velocities;

        let obs = observe(&hand_env, 0.0, &mut rng);
        let (flat, _) = sample_action(policy, &obs, &mut rng, true);
        let hand_action = Action::from_flat(&flat);

        let probe_target = rollout_reference(policy, &hand_env, cfg.k);
        let x_h_next = hand_trajectory.get(t + 1).unwrap_or(&hand_trajectory[t]);
        let trace = control_step(chain, &robot_env.state.agent_q, x_h_next, &probe_target, cfg)?;

        // hand the QP's q̇_d to the env as normalized velocity commands
        let limits = chain.velocity_limits();
        let mut cmd = DVector::zeros(chain.dof());
        for i in 0..chain.dof() {
            cmd[i] = (trace.qdot_d[i] / limits[i]).clamp(-1.0, 1.0);
        }
        let action = Action {
            joint_velocity: cmd,
            fingers: hand_action.fingers,
        };
        let (_, _, info) = robot_env
            .step(&action)
            .expect("dimensions fixed by the chain");

        record.max_abs_qdot = record.max_abs_qdot.max(trace.qdot_d.amax());
        if trace.relaxed {
            record.relaxed_steps += 1;
        }
        let ee = robot_env.ee_pose();
        let err = (ee.position - x_h_next.position).norm();
        sq_err_sum += err * err;
        record.traces.push(trace);
        record.steps = t + 1;
        if info.success {
            record.success = true;
            break;
        }
    }
    record.tracking_rms = (sq_err_sum / record.steps as f64).sqrt();
    Ok(record)
}

/// Roll one deterministic floating-hand episode and record the EE poses
/// visited (including the start pose), for later robot execution.
pub fn record_hand_trajectory(
    policy: &PolicyNet,
    hand_env: &Env,
) -> (Vec<Pose>, Vec<[f64; 2]>, bool) {
    let mut env = hand_env.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0x7a11);
    let mut poses = vec![env.ee_pose()];
    let mut fingers = Vec::new();
    loop {
        let obs = observe(&env, 0.0, &mut rng);
        let (flat, _) = sample_action(policy, &obs, &mut rng, true);
        let action = Action::from_flat(&flat);
        let (_, done, info) = env.step(&action).expect("fixed dims");
        poses.push(env.ee_pose());
        fingers.push(action.fingers);
        if done {
            return (poses, fingers, info.success);
        }
    }
}
