//! Kinematic drawer-opening environment.
//!
//! Hosts both agent embodiments: the 6-DoF floating hand that learns the
//! skill, and the 11-DoF whole-robot joint-space agent used as a baseline.
//! Cabinets are procedurally generated from seeds; the drawer is a prismatic
//! link pulled by a kinematic grasp (proximity + closing fingers), with no
//! contact physics.
//!
//! World layout: the cabinet body sits behind the `x = 0` plane, the drawer
//! slides out along `+x`, and the handle protrudes from the drawer face.

use crate::kinematics::{KinematicChain, Pose};
use nalgebra::{DVector, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("action dimension {got} does not match agent dimension {expected}")]
    ActionDimension { expected: usize, got: usize },
    #[error("environment sync failed: {0}")]
    Sync(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentMode {
    FloatingHand,
    WholeRobot,
}

/// Uniform sampling ranges for procedural cabinets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CabinetRanges {
    pub drawer_height: [f64; 2],
    pub handle_lateral: [f64; 2],
    /// How far the handle protrudes from the drawer face (m).
    pub handle_depth: [f64; 2],
    pub full_length: [f64; 2],
    pub friction_resistance: [f64; 2],
    pub face_width: [f64; 2],
    pub face_height: [f64; 2],
}

impl Default for CabinetRanges {
    fn default() -> Self {
        CabinetRanges {
            drawer_height: [0.3, 0.7],
            handle_lateral: [-0.15, 0.15],
            handle_depth: [0.02, 0.06],
            full_length: [0.15, 0.3],
            friction_resistance: [0.0, 0.3],
            face_width: [0.3, 0.6],
            face_height: [0.1, 0.2],
        }
    }
}

impl CabinetRanges {
    pub fn validate(&self) -> Result<(), String> {
        let pairs = [
            ("drawer_height", self.drawer_height),
            ("handle_lateral", self.handle_lateral),
            ("handle_depth", self.handle_depth),
            ("full_length", self.full_length),
            ("friction_resistance", self.friction_resistance),
            ("face_width", self.face_width),
            ("face_height", self.face_height),
        ];
        for (name, [lo, hi]) in pairs {
            if lo > hi {
                return Err(format!("{name}: lo {lo} > hi {hi}"));
            }
        }
        if self.full_length[0] <= 0.0 {
            return Err("full_length must be positive".into());
        }
        Ok(())
    }
}

/// One procedurally generated drawer cabinet, fixed to the ground.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CabinetModel {
    pub id: u64,
    #[serde(skip, default = "Pose::identity")]
    pub base_pose: Pose,
    #[serde(skip, default = "default_axis")]
    pub drawer_axis: Vector3<f64>,
    pub drawer_height: f64,
    pub handle_lateral: f64,
    pub handle_depth: f64,
    pub full_length: f64,
    pub friction_resistance: f64,
    pub drawer_face_size: (f64, f64),
}

fn default_axis() -> Vector3<f64> {
    Vector3::x()
}

impl CabinetModel {
    /// Pose of the drawer link (its face center) at a given extension.
    pub fn link_pose(&self, extension: f64) -> Pose {
        let local = Vector3::new(0.0, 0.0, self.drawer_height) + self.drawer_axis * extension;
        self.base_pose
            .compose(&Pose::from_translation(local))
    }

    /// Pose of the handle at a given extension.
    pub fn handle_pose(&self, extension: f64) -> Pose {
        let offset = Pose::from_translation(
            self.drawer_axis * self.handle_depth + Vector3::new(0.0, self.handle_lateral, 0.0),
        );
        self.link_pose(extension).compose(&offset)
    }

    pub fn handle_point(&self, extension: f64) -> Vector3<f64> {
        self.handle_pose(extension).position
    }
}

/// Draw a deterministic cabinet from `seed` and the given parameter ranges.
pub fn sample_cabinet(seed: u64, ranges: &CabinetRanges) -> CabinetModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(seed));
    let mut draw = |[lo, hi]: [f64; 2]| {
        if lo == hi {
            lo
        } else {
            rng.gen_range(lo..hi)
        }
    };
    CabinetModel {
        id: seed,
        base_pose: Pose::identity(),
        drawer_axis: Vector3::x(),
        drawer_height: draw(ranges.drawer_height),
        handle_lateral: draw(ranges.handle_lateral),
        handle_depth: draw(ranges.handle_depth),
        full_length: draw(ranges.full_length),
        friction_resistance: draw(ranges.friction_resistance),
        drawer_face_size: (draw(ranges.face_width), draw(ranges.face_height)),
    }
}

/// Full simulation state: cabinet, drawer, agent joints, fingers, grasp.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub cabinet: CabinetModel,
    pub mode: AgentMode,
    pub drawer_extension: f64,
    pub drawer_velocity: f64,
    pub agent_q: DVector<f64>,
    pub agent_qdot: DVector<f64>,
    /// Per-finger opening in [0, finger_max].
    pub finger_positions: Vector2<f64>,
    pub finger_velocities: Vector2<f64>,
    pub grasp_attached: bool,
    pub step_count: usize,
}

/// Normalized agent command: joint velocities and finger position targets,
/// all in (-1, 1).
#[derive(Debug, Clone)]
pub struct Action {
    pub joint_velocity: DVector<f64>,
    pub fingers: [f64; 2],
}

impl Action {
    pub fn zero(joint_dim: usize) -> Self {
        Action {
            joint_velocity: DVector::zeros(joint_dim),
            fingers: [0.0, 0.0],
        }
    }

    /// Build from a flat vector `[joint_velocity..., finger0, finger1]`.
    pub fn from_flat(v: &DVector<f64>) -> Self {
        let jd = v.len() - 2;
        Action {
            joint_velocity: v.rows(0, jd).into_owned(),
            fingers: [v[jd], v[jd + 1]],
        }
    }

    pub fn to_flat(&self) -> DVector<f64> {
        let jd = self.joint_velocity.len();
        let mut v = DVector::zeros(jd + 2);
        v.rows_mut(0, jd).copy_from(&self.joint_velocity);
        v[jd] = self.fingers[0];
        v[jd + 1] = self.fingers[1];
        v
    }
}

pub type StateVector = DVector<f64>;

#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    /// EE-to-handle distance after the step (m).
    pub handle_distance: f64,
    /// Drawer opening extent in [0, 1].
    pub open_fraction: f64,
    pub success: bool,
    pub grasp_attached: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvParams {
    pub dt: f64,
    pub grasp_radius: f64,
    pub break_radius: f64,
    pub finger_max: f64,
    pub finger_speed: f64,
    pub max_steps: usize,
    /// Start distance band in front of the handle (m).
    pub start_distance: [f64; 2],
    /// Half-range of the random lateral/vertical start offset (m).
    pub start_spread: f64,
    /// Half-range of the random start orientation per axis (rad).
    pub start_tilt: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams {
            dt: 0.05,
            grasp_radius: 0.02,
            break_radius: 0.04,
            finger_max: 0.04,
            finger_speed: 0.2,
            max_steps: 200,
            start_distance: [0.15, 0.35],
            start_spread: 0.1,
            start_tilt: 0.2,
        }
    }
}

/// One agent interacting with one cabinet. Owns its state; all randomness
/// comes from the reset seed.
#[derive(Debug, Clone)]
pub struct Env {
    pub mode: AgentMode,
    pub chain: KinematicChain,
    pub params: EnvParams,
    pub state: WorldState,
}

pub fn agent_chain(mode: AgentMode) -> KinematicChain {
    match mode {
        AgentMode::FloatingHand => crate::kinematics::floating_hand(),
        AgentMode::WholeRobot => crate::kinematics::mobile_franka(),
    }
}

/// Observation vector length for an agent mode (see [`observe`]).
pub fn obs_dim(mode: AgentMode) -> usize {
    let joint_dim = match mode {
        AgentMode::FloatingHand => 6,
        AgentMode::WholeRobot => 11,
    };
    7 + 14 + 14 + 2 + 2 * joint_dim + 12
}

pub fn action_dim(mode: AgentMode) -> usize {
    match mode {
        AgentMode::FloatingHand => 8,
        AgentMode::WholeRobot => 13,
    }
}

impl Env {
    /// Reset the environment: drawer closed, agent at a seed-randomized pose
    /// in front of the handle, fingers half open.
    pub fn reset(mode: AgentMode, cabinet: CabinetModel, seed: u64, params: EnvParams) -> Env {
        let chain = agent_chain(mode);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD1F_u64.rotate_left(17));
        let handle = cabinet.handle_point(0.0);
        let dist = rng.gen_range(params.start_distance[0]..=params.start_distance[1]);
        let dy = rng.gen_range(-params.start_spread..=params.start_spread);
        let dz = rng.gen_range(-params.start_spread..=params.start_spread);

        let n = chain.dof();
        let mut q = DVector::zeros(n);
        match mode {
            AgentMode::FloatingHand => {
                q[0] = handle.x + dist;
                q[1] = handle.y + dy;
                q[2] = handle.z + dz;
                for i in 3..6 {
                    q[i] = rng.gen_range(-params.start_tilt..=params.start_tilt);
                }
            }
            AgentMode::WholeRobot => {
                // base in front of the cabinet facing it, arm at a bent home
                q[0] = handle.x + 0.45 + dist;
                q[1] = handle.y + dy;
                q[2] = std::f64::consts::PI; // yaw toward -x
                q[3] = (handle.z - 0.35).clamp(0.0, 0.5);
                let arm_home = ROBOT_GRASP_ARM;
                for (i, v) in arm_home.iter().enumerate() {
                    q[4 + i] = *v;
                }
            }
        }
        chain.clamp_to_limits(&mut q);

        let state = WorldState {
            cabinet,
            mode,
            drawer_extension: 0.0,
            drawer_velocity: 0.0,
            agent_q: q,
            agent_qdot: DVector::zeros(n),
            finger_positions: Vector2::repeat(params.finger_max / 2.0),
            finger_velocities: Vector2::zeros(),
            grasp_attached: false,
            step_count: 0,
        };
        Env {
            mode,
            chain,
            params,
            state,
        }
    }

    pub fn ee_pose(&self) -> Pose {
        self.chain
            .forward_kinematics(&self.state.agent_q)
            .expect("state dimension always matches the chain")
    }

    /// World positions of the two fingertips: the gripper closes along its
    /// local y axis, tips in the EE plane.
    pub fn fingertips(&self) -> [Vector3<f64>; 2] {
        fingertips_of(&self.ee_pose(), &self.state.finger_positions)
    }

    /// Advance one control step. Commands outside (-1, 1) are clamped.
    pub fn step(&mut self, action: &Action) -> Result<(f64, bool, StepInfo), EnvError> {
        let n = self.chain.dof();
        if action.joint_velocity.len() != n {
            return Err(EnvError::ActionDimension {
                expected: n,
                got: action.joint_velocity.len(),
            });
        }
        let p = self.params.clone();
        let prev = self.state.clone();
        let ee_before = self.ee_pose();

        // joints: normalized command scaled by per-joint velocity limits
        let limits = self.chain.velocity_limits();
        let mut q_new = prev.agent_q.clone();
        for i in 0..n {
            let cmd = action.joint_velocity[i].clamp(-1.0, 1.0);
            q_new[i] += cmd * limits[i] * p.dt;
        }
        self.chain.clamp_to_limits(&mut q_new);
        let qdot = (&q_new - &prev.agent_q) / p.dt;

        // fingers: move toward commanded opening at bounded speed
        let mut fingers = prev.finger_positions;
        let mut fvel = Vector2::zeros();
        let mut closing_intent = true;
        for i in 0..2 {
            let cmd = action.fingers[i].clamp(-1.0, 1.0);
            let target = (cmd + 1.0) / 2.0 * p.finger_max;
            if target > fingers[i] + 1e-9 {
                closing_intent = false;
            }
            let max_move = p.finger_speed * p.dt;
            let delta = (target - fingers[i]).clamp(-max_move, max_move);
            fingers[i] += delta;
            fvel[i] = delta / p.dt;
        }

        self.state.agent_q = q_new;
        self.state.agent_qdot = qdot;
        self.state.finger_positions = fingers;
        self.state.finger_velocities = fvel;

        let ee_after = self.ee_pose();
        let handle = self.state.cabinet.handle_point(self.state.drawer_extension);
        let axis = self.state.cabinet.drawer_axis;

        // grasp bookkeeping
        if !self.state.grasp_attached {
            let tips = fingertips_of(&ee_after, &fingers);
            let near = tips
                .iter()
                .all(|t| (t - handle).norm() <= p.grasp_radius);
            let closed_enough = fingers.mean() <= 0.5 * p.finger_max;
            if near && closed_enough && closing_intent {
                self.state.grasp_attached = true;
            }
        } else {
            let rel = ee_after.position - handle;
            let lateral = (rel - axis * rel.dot(&axis)).norm();
            let opened = fingers.mean() > 0.75 * p.finger_max;
            if opened || lateral > p.break_radius {
                self.state.grasp_attached = false;
            }
        }

        // drawer follows the EE displacement projected on its axis
        if self.state.grasp_attached {
            let pulled = (ee_after.position - ee_before.position).dot(&axis)
                * (1.0 - self.state.cabinet.friction_resistance);
            let ext = (prev.drawer_extension + pulled).clamp(0.0, self.state.cabinet.full_length);
            self.state.drawer_velocity = (ext - prev.drawer_extension) / p.dt;
            self.state.drawer_extension = ext;
        } else {
            self.state.drawer_velocity = 0.0;
        }

        self.state.step_count = prev.step_count + 1;

        let r = reward(&prev, action, &self.state, &ee_after);
        let succ = success(&self.state);
        let done = succ || self.state.step_count >= p.max_steps;
        let handle_now = self.state.cabinet.handle_point(self.state.drawer_extension);
        let info = StepInfo {
            handle_distance: (ee_after.position - handle_now).norm(),
            open_fraction: self.state.drawer_extension / self.state.cabinet.full_length,
            success: succ,
            grasp_attached: self.state.grasp_attached,
        };
        Ok((r, done, info))
    }
}

fn fingertips_of(ee: &Pose, fingers: &Vector2<f64>) -> [Vector3<f64>; 2] {
    let y = ee.orientation * Vector3::y();
    [
        ee.position + y * fingers[0],
        ee.position - y * fingers[1],
    ]
}

/// Staged drawer-opening reward.
///
/// With `d` the EE-handle distance and `c_op` the opening extent: far from
/// the handle only the approach term `-d` applies; once at the handle a
/// stage bonus plus the opening term `2 c_op` kicks in, and past 90% opening
/// a further bonus rewards a static drawer.
pub fn reward(_prev: &WorldState, _action: &Action, next: &WorldState, ee_after: &Pose) -> f64 {
    let handle = next.cabinet.handle_point(next.drawer_extension);
    let d = (ee_after.position - handle).norm();
    let c_op = next.drawer_extension / next.cabinet.full_length;

    const W_D: f64 = 1.0;
    const W_L: f64 = 2.0;
    const W_S: f64 = 1.0;
    const V_REF: f64 = 0.01;

    let r_ee = -W_D * d;
    if d > 0.01 {
        r_ee
    } else if c_op < 0.9 {
        2.0 + r_ee + W_L * c_op
    } else {
        let r_stc = W_S * (-next.drawer_velocity.abs() / V_REF).exp();
        4.0 + r_ee + W_L * c_op + r_stc
    }
}

/// Success: drawer opened to at least 90% of its extent.
pub fn success(state: &WorldState) -> bool {
    state.drawer_extension >= 0.9 * state.cabinet.full_length
}

/// Flatten the world state into the RL observation vector:
/// `[s_cab(7), s_link cur+full(14), s_hdl cur+full(14), s_size(2),
///   q(n), qdot(n), fingertip pos(6), fingertip vel(6)]`.
///
/// `noise_sigma > 0` adds zero-mean Gaussian noise to the object-state
/// position entries (the stand-in for vision estimation error).
pub fn observe<R: Rng>(
    env: &Env,
    noise_sigma: f64,
    rng: &mut R,
) -> StateVector {
    let s = &env.state;
    let n = env.chain.dof();
    let mut out = Vec::with_capacity(obs_dim(s.mode));

    let push_pose = |out: &mut Vec<f64>, p: &Pose| {
        out.push(p.position.x);
        out.push(p.position.y);
        out.push(p.position.z);
        let q = p.orientation.into_inner();
        out.extend_from_slice(&[q.w, q.i, q.j, q.k]);
    };

    push_pose(&mut out, &s.cabinet.base_pose);
    push_pose(&mut out, &s.cabinet.link_pose(s.drawer_extension));
    push_pose(&mut out, &s.cabinet.link_pose(s.cabinet.full_length));
    push_pose(&mut out, &s.cabinet.handle_pose(s.drawer_extension));
    push_pose(&mut out, &s.cabinet.handle_pose(s.cabinet.full_length));
    out.push(s.cabinet.full_length);
    out.push(s.drawer_extension);

    if noise_sigma > 0.0 {
        // corrupt position entries of the object blocks (poses are laid out
        // pos(3) + quat(4)); s_size entries are lengths and get noise too
        let normal = rand_distr::Normal::new(0.0, noise_sigma).expect("sigma > 0");
        for block in 0..5 {
            for k in 0..3 {
                out[block * 7 + k] += rng.sample(normal);
            }
        }
        let len = out.len();
        out[len - 2] += rng.sample(normal);
        out[len - 1] += rng.sample(normal);
    }

    for i in 0..n {
        out.push(s.agent_q[i]);
    }
    for i in 0..n {
        out.push(s.agent_qdot[i]);
    }

    let ee = env.ee_pose();
    let tips = fingertips_of(&ee, &s.finger_positions);
    for t in &tips {
        out.push(t.x);
        out.push(t.y);
        out.push(t.z);
    }
    // fingertip velocity from the EE twist plus the finger opening rate
    let twist = env
        .chain
        .jacobian(&s.agent_q)
        .expect("dimensions match")
        * &s.agent_qdot;
    let v_ee = Vector3::new(twist[0], twist[1], twist[2]);
    let w_ee = Vector3::new(twist[3], twist[4], twist[5]);
    let y_axis = ee.orientation * Vector3::y();
    let signs = [1.0, -1.0];
    for (i, t) in tips.iter().enumerate() {
        let v = v_ee + w_ee.cross(&(t - ee.position)) + y_axis * signs[i] * s.finger_velocities[i];
        out.push(v.x);
        out.push(v.y);
        out.push(v.z);
    }

    DVector::from_vec(out)
}

/// Euler angles (a, b, c) such that `R = Rx(a) Ry(b) Rz(c)`, matching the
/// floating hand's revolute joint order.
pub fn xyz_euler(q: &UnitQuaternion<f64>) -> (f64, f64, f64) {
    let r = q.to_rotation_matrix();
    let m = r.matrix();
    let sb = m[(0, 2)].clamp(-1.0, 1.0);
    let b = sb.asin();
    if sb.abs() > 1.0 - 1e-10 {
        // gimbal lock: fold the lost DoF into the first angle
        let a = m[(1, 0)].atan2(m[(1, 1)]);
        (a, b, 0.0)
    } else {
        let a = (-m[(1, 2)]).atan2(m[(2, 2)]);
        let c = (-m[(0, 1)]).atan2(m[(0, 0)]);
        (a, b, c)
    }
}

/// Joint vector that places the floating hand at `pose`.
pub fn hand_q_for_pose(pose: &Pose) -> DVector<f64> {
    let (a, b, c) = xyz_euler(&pose.orientation);
    DVector::from_vec(vec![
        pose.position.x,
        pose.position.y,
        pose.position.z,
        a,
        b,
        c,
    ])
}

/// Arm posture whose EE orientation is world-identity when the base faces
/// -x (yaw = pi): the pitch joints sum to pi/2, pointing the flange forward.
pub const ROBOT_GRASP_ARM: [f64; 7] = [0.0, 0.6, 0.0, -1.8, 0.0, 2.7708, 0.0];

/// A robot configuration that grasps near `target` with an identity-ish EE
/// orientation; used to seed IK away from contorted local minima.
pub fn robot_grasp_seed(target: &Pose) -> DVector<f64> {
    let mut q = DVector::zeros(11);
    q[0] = target.position.x + 0.35;
    q[1] = target.position.y;
    q[2] = std::f64::consts::PI;
    q[3] = (target.position.z - 0.55).clamp(0.0, 0.5);
    for (i, v) in ROBOT_GRASP_ARM.iter().enumerate() {
        q[4 + i] = *v;
    }
    q
}

/// Copy the cabinet state of a floating-hand environment into a robot-mode
/// environment and solve the robot configuration so its EE matches the hand
/// pose (base free). The grasp bookkeeping carries over.
pub fn sync_environments(
    hand_env: &Env,
    robot_env: &mut Env,
    ik_opts: &crate::ik::IkOptions,
    rng: &mut ChaCha8Rng,
) -> Result<(), EnvError> {
    if hand_env.state.cabinet.id != robot_env.state.cabinet.id {
        return Err(EnvError::Sync("cabinet ids differ".into()));
    }
    let hand_pose = hand_env.ee_pose();
    let mut opts = ik_opts.clone();
    opts.lock_base = false;
    let mut res = crate::ik::solve_ik(
        &robot_env.chain,
        &robot_env.state.agent_q,
        &hand_pose,
        &opts,
        rng,
    )
    .map_err(|e| EnvError::Sync(e.to_string()))?;
    if !res.reachable {
        // retry harder from the canonical grasp posture near the target
        let seed = robot_grasp_seed(&hand_pose);
        let mut retry = opts.clone();
        retry.restarts = retry.restarts.max(12);
        retry.max_iterations = retry.max_iterations.max(200);
        res = crate::ik::solve_ik(&robot_env.chain, &seed, &hand_pose, &retry, rng)
            .map_err(|e| EnvError::Sync(e.to_string()))?;
    }
    let q = res
        .q_hat
        .ok_or_else(|| EnvError::Sync("IK could not reach the hand pose".into()))?;

    robot_env.state.cabinet = hand_env.state.cabinet.clone();
    robot_env.state.drawer_extension = hand_env.state.drawer_extension;
    robot_env.state.drawer_velocity = hand_env.state.drawer_velocity;
    robot_env.state.grasp_attached = hand_env.state.grasp_attached;
    robot_env.state.finger_positions = hand_env.state.finger_positions;
    robot_env.state.finger_velocities = hand_env.state.finger_velocities;
    robot_env.state.agent_q = q;
    robot_env
        .state
        .agent_qdot
        .iter_mut()
        .for_each(|v| *v = 0.0);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn default_env(seed: u64) -> Env {
        let cab = sample_cabinet(seed, &CabinetRanges::default());
        Env::reset(AgentMode::FloatingHand, cab, seed, EnvParams::default())
    }

    #[test]
    fn cabinet_sampling_is_deterministic_and_in_range() {
        let ranges = CabinetRanges::default();
        for seed in 0..25 {
            let a = sample_cabinet(seed, &ranges);
            let b = sample_cabinet(seed, &ranges);
            assert_eq!(a.full_length, b.full_length);
            assert_eq!(a.drawer_height, b.drawer_height);
            assert!(a.full_length >= ranges.full_length[0] && a.full_length <= ranges.full_length[1]);
            assert!(a.drawer_height >= ranges.drawer_height[0]);
            assert!(a.friction_resistance <= ranges.friction_resistance[1]);
        }
    }

    #[test]
    fn train_and_test_seed_pools_are_disjoint_cabinets() {
        let ranges = CabinetRanges::default();
        let fingerprint = |c: &CabinetModel| {
            (
                c.full_length.to_bits(),
                c.drawer_height.to_bits(),
                c.handle_lateral.to_bits(),
            )
        };
        let train: Vec<_> = (0..15).map(|s| fingerprint(&sample_cabinet(s, &ranges))).collect();
        for s in 15..25 {
            let f = fingerprint(&sample_cabinet(s, &ranges));
            assert!(!train.contains(&f), "test cabinet {s} duplicates a train cabinet");
        }
    }

    #[test]
    fn reset_starts_closed_with_half_open_fingers() {
        let env = default_env(3);
        assert_eq!(env.state.drawer_extension, 0.0);
        assert_eq!(env.state.step_count, 0);
        assert!(!env.state.grasp_attached);
        assert_relative_eq!(env.state.finger_positions[0], env.params.finger_max / 2.0);
        // hand starts in front of the handle (larger x), within the spread box
        let handle = env.state.cabinet.handle_point(0.0);
        let ee = env.ee_pose();
        assert!(ee.position.x > handle.x + env.params.start_distance[0] - 1e-9);
        assert!((ee.position.y - handle.y).abs() <= env.params.start_spread + 1e-9);
    }

    #[test]
    fn reset_is_deterministic_per_seed() {
        let a = default_env(7);
        let b = default_env(7);
        assert_eq!(a.state.agent_q, b.state.agent_q);
        let c = default_env(8);
        assert_ne!(a.state.agent_q, c.state.agent_q);
    }

    #[test]
    fn zero_action_changes_only_step_count() {
        let mut env = default_env(1);
        let before = env.state.clone();
        let (_, done, _) = env.step(&Action::zero(6)).unwrap();
        assert!(!done);
        assert_eq!(env.state.step_count, 1);
        assert_eq!(env.state.agent_q, before.agent_q);
        assert_eq!(env.state.finger_positions, before.finger_positions);
        assert_eq!(env.state.drawer_extension, before.drawer_extension);
    }

    #[test]
    fn action_dimension_mismatch_is_an_error() {
        let mut env = default_env(1);
        assert!(matches!(
            env.step(&Action::zero(5)),
            Err(EnvError::ActionDimension { expected: 6, got: 5 })
        ));
    }

    #[test]
    fn episode_times_out_at_max_steps() {
        let mut env = default_env(2);
        let a = Action::zero(6);
        for k in 1..=200 {
            let (_, done, _) = env.step(&a).unwrap();
            assert_eq!(done, k == 200, "done flag wrong at step {k}");
        }
    }

    /// Put the hand exactly at the handle with fingers nearly closed so the
    /// next closing command attaches the grasp.
    fn teleport_to_handle(env: &mut Env) {
        let handle = env.state.cabinet.handle_point(env.state.drawer_extension);
        env.state.agent_q[0] = handle.x;
        env.state.agent_q[1] = handle.y;
        env.state.agent_q[2] = handle.z;
        env.state.agent_q[3] = 0.0;
        env.state.agent_q[4] = 0.0;
        env.state.agent_q[5] = 0.0;
        env.state.finger_positions = Vector2::repeat(0.012);
    }

    #[test]
    fn grasp_attaches_when_near_and_closing() {
        let mut env = default_env(4);
        teleport_to_handle(&mut env);
        let mut a = Action::zero(6);
        a.fingers = [-1.0, -1.0];
        let (_, _, info) = env.step(&a).unwrap();
        assert!(info.grasp_attached, "closing at the handle must attach");
        assert!(info.handle_distance < 0.01);
    }

    #[test]
    fn grasp_does_not_attach_when_opening_or_far() {
        let mut env = default_env(4);
        teleport_to_handle(&mut env);
        let mut a = Action::zero(6);
        a.fingers = [1.0, 1.0]; // opening
        env.step(&a).unwrap();
        assert!(!env.state.grasp_attached);

        let mut env = default_env(4);
        let mut a = Action::zero(6);
        a.fingers = [-1.0, -1.0];
        env.step(&a).unwrap(); // hand still 15+ cm away
        assert!(!env.state.grasp_attached);
    }

    #[test]
    fn attached_pull_projects_displacement_onto_axis() {
        let mut env = default_env(5);
        env.state.cabinet.friction_resistance = 0.0;
        teleport_to_handle(&mut env);
        let mut close = Action::zero(6);
        close.fingers = [-1.0, -1.0];
        env.step(&close).unwrap();
        assert!(env.state.grasp_attached);

        // pull straight out along +x at full speed: dq = 1.0 * 1.0 m/s * dt
        let mut pull = Action::zero(6);
        pull.joint_velocity[0] = 1.0;
        pull.fingers = [-1.0, -1.0];
        let ext0 = env.state.drawer_extension;
        env.step(&pull).unwrap();
        let expected = ext0 + 1.0 * env.params.dt;
        assert_relative_eq!(env.state.drawer_extension, expected.min(env.state.cabinet.full_length), epsilon = 1e-12);
        assert!(env.state.drawer_velocity > 0.0);

        // a pure lateral move must not change the extension
        let ext1 = env.state.drawer_extension;
        let mut side = Action::zero(6);
        side.joint_velocity[1] = 0.2;
        side.fingers = [-1.0, -1.0];
        env.step(&side).unwrap();
        assert_relative_eq!(env.state.drawer_extension, ext1, epsilon = 1e-12);
    }

    #[test]
    fn friction_scales_the_pull() {
        let mut env = default_env(6);
        env.state.cabinet.friction_resistance = 0.3;
        teleport_to_handle(&mut env);
        let mut close = Action::zero(6);
        close.fingers = [-1.0, -1.0];
        env.step(&close).unwrap();
        let mut pull = Action::zero(6);
        pull.joint_velocity[0] = 1.0;
        pull.fingers = [-1.0, -1.0];
        let ext0 = env.state.drawer_extension;
        env.step(&pull).unwrap();
        let expected = ext0 + 0.7 * 1.0 * env.params.dt;
        assert_relative_eq!(env.state.drawer_extension, expected, epsilon = 1e-12);
    }

    #[test]
    fn extension_clamps_at_full_length_and_zero() {
        let mut env = default_env(7);
        env.state.cabinet.friction_resistance = 0.0;
        env.state.cabinet.full_length = 0.15;
        teleport_to_handle(&mut env);
        let mut close = Action::zero(6);
        close.fingers = [-1.0, -1.0];
        env.step(&close).unwrap();
        let mut pull = Action::zero(6);
        pull.joint_velocity[0] = 1.0;
        pull.fingers = [-1.0, -1.0];
        for _ in 0..10 {
            env.step(&pull).unwrap();
        }
        assert_relative_eq!(env.state.drawer_extension, 0.15, epsilon = 1e-12);
        let mut push = pull.clone();
        push.joint_velocity[0] = -1.0;
        for _ in 0..10 {
            env.step(&push).unwrap();
        }
        assert_eq!(env.state.drawer_extension, 0.0);
    }

    #[test]
    fn grasp_breaks_when_pulled_off_laterally() {
        let mut env = default_env(8);
        teleport_to_handle(&mut env);
        let mut close = Action::zero(6);
        close.fingers = [-1.0, -1.0];
        env.step(&close).unwrap();
        assert!(env.state.grasp_attached);
        // 5 cm sideways exceeds the 4 cm break radius
        let mut side = Action::zero(6);
        side.joint_velocity[2] = 1.0;
        side.fingers = [-1.0, -1.0];
        env.step(&side).unwrap();
        assert!(!env.state.grasp_attached);
    }

    #[test]
    fn success_threshold_is_ninety_percent() {
        let mut env = default_env(9);
        env.state.cabinet.full_length = 0.2;
        env.state.drawer_extension = 0.9 * 0.2 - 1e-9;
        assert!(!success(&env.state));
        env.state.drawer_extension = 0.9 * 0.2;
        assert!(success(&env.state));
    }

    #[test]
    fn success_terminates_the_episode() {
        let mut env = default_env(10);
        env.state.cabinet.friction_resistance = 0.0;
        teleport_to_handle(&mut env);
        let mut close = Action::zero(6);
        close.fingers = [-1.0, -1.0];
        env.step(&close).unwrap();
        let mut pull = Action::zero(6);
        pull.joint_velocity[0] = 1.0;
        pull.fingers = [-1.0, -1.0];
        let mut done = false;
        for _ in 0..20 {
            let (_, d, info) = env.step(&pull).unwrap();
            if d {
                assert!(info.success);
                done = true;
                break;
            }
        }
        assert!(done, "full-speed pull must open the drawer within 20 steps");
    }

    // reward arithmetic, checked against the staged formula by hand
    fn reward_for(d: f64, c_op: f64, v: f64) -> f64 {
        let mut env = default_env(11);
        env.state.cabinet.full_length = 0.2;
        env.state.drawer_extension = c_op * 0.2;
        env.state.drawer_velocity = v;
        let handle = env.state.cabinet.handle_point(env.state.drawer_extension);
        let ee = Pose::from_translation(handle + Vector3::new(0.0, 0.0, d));
        let prev = env.state.clone();
        reward(&prev, &Action::zero(6), &env.state, &ee)
    }

    #[test]
    fn reward_stage_far() {
        assert_relative_eq!(reward_for(0.5, 0.0, 0.0), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn reward_stage_grasped() {
        assert_relative_eq!(reward_for(0.005, 0.5, 0.1), 2.0 - 0.005 + 1.0, epsilon = 1e-12);
    }

    #[test]
    fn reward_stage_opened_static() {
        assert_relative_eq!(
            reward_for(0.005, 0.95, 0.0),
            4.0 - 0.005 + 1.9 + 1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn reward_static_bonus_decays_with_drawer_speed() {
        let fast = reward_for(0.005, 0.95, 0.05);
        let slow = reward_for(0.005, 0.95, 0.001);
        assert!(slow > fast);
        assert_relative_eq!(
            slow - fast,
            (-0.1_f64).exp() - (-5.0_f64).exp(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn observation_has_documented_layout_and_length() {
        use rand::SeedableRng;
        let env = default_env(12);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let obs = observe(&env, 0.0, &mut rng);
        assert_eq!(obs.len(), obs_dim(AgentMode::FloatingHand));
        assert_eq!(obs.len(), 61);
        // s_cab is the identity base pose
        assert_eq!(obs[0], 0.0);
        assert_eq!(obs[3], 1.0);
        // s_size block: full_length then current extension
        assert_relative_eq!(obs[35], env.state.cabinet.full_length);
        assert_eq!(obs[36], 0.0);
        // q block follows
        for i in 0..6 {
            assert_eq!(obs[37 + i], env.state.agent_q[i]);
        }

        let cab = sample_cabinet(13, &CabinetRanges::default());
        let renv = Env::reset(AgentMode::WholeRobot, cab, 13, EnvParams::default());
        let robs = observe(&renv, 0.0, &mut rng);
        assert_eq!(robs.len(), obs_dim(AgentMode::WholeRobot));
        assert_eq!(robs.len(), 71);
    }

    #[test]
    fn observation_noise_mean_absolute_perturbation() {
        use rand::SeedableRng;
        let env = default_env(14);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let clean = observe(&env, 0.0, &mut rng);
        let sigma = 0.005;
        let mut acc = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let noisy = observe(&env, sigma, &mut rng);
            // handle position lives at obs[21..24]
            acc += (noisy[21] - clean[21]).abs();
        }
        let mean_abs = acc / n as f64;
        // E|N(0, sigma)| = sigma * sqrt(2/pi) = 0.798 sigma
        assert_relative_eq!(mean_abs, sigma * (2.0 / std::f64::consts::PI).sqrt(), epsilon = 0.1 * sigma);
        // joint block must stay exact
        let noisy = observe(&env, sigma, &mut rng);
        for i in 0..6 {
            assert_eq!(noisy[37 + i], clean[37 + i]);
        }
    }

    #[test]
    fn xyz_euler_round_trips() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let a = rng.gen_range(-1.5..1.5);
            let b = rng.gen_range(-1.4..1.4);
            let c = rng.gen_range(-1.5..1.5);
            let q = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), a)
                * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), b)
                * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), c);
            let (ra, rb, rc) = xyz_euler(&q);
            assert_relative_eq!(ra, a, epsilon = 1e-9);
            assert_relative_eq!(rb, b, epsilon = 1e-9);
            assert_relative_eq!(rc, c, epsilon = 1e-9);
        }
    }

    #[test]
    fn hand_q_for_pose_matches_fk() {
        use rand::SeedableRng;
        let chain = agent_chain(AgentMode::FloatingHand);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let q = chain.random_configuration(&mut rng);
            let pose = chain.forward_kinematics(&q).unwrap();
            let q_rec = hand_q_for_pose(&pose);
            let pose_rec = chain.forward_kinematics(&q_rec).unwrap();
            let e = crate::kinematics::pose_error(&pose_rec, &pose);
            assert!(e.norm() < 1e-9, "round-trip error {}", e.norm());
        }
    }

    #[test]
    fn sync_environments_aligns_robot_ee_to_hand() {
        use rand::SeedableRng;
        let ranges = CabinetRanges::default();
        let cab = sample_cabinet(3, &ranges);
        let mut hand = Env::reset(AgentMode::FloatingHand, cab.clone(), 3, EnvParams::default());
        // advance the hand a little so the state is non-trivial
        let mut a = Action::zero(6);
        a.joint_velocity[0] = -0.5;
        for _ in 0..5 {
            hand.step(&a).unwrap();
        }
        let mut robot = Env::reset(AgentMode::WholeRobot, cab, 3, EnvParams::default());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        sync_environments(&hand, &mut robot, &crate::ik::IkOptions::default(), &mut rng).unwrap();

        let hp = hand.ee_pose();
        let rp = robot.ee_pose();
        let e = crate::kinematics::pose_error(&rp, &hp);
        assert!(e.norm() < 2e-3, "EE mismatch after sync: {}", e.norm());
        assert_eq!(robot.state.drawer_extension, hand.state.drawer_extension);
        assert_eq!(robot.state.grasp_attached, hand.state.grasp_attached);
    }

    #[test]
    fn sync_rejects_mismatched_cabinets() {
        use rand::SeedableRng;
        let ranges = CabinetRanges::default();
        let hand = Env::reset(AgentMode::FloatingHand, sample_cabinet(1, &ranges), 1, EnvParams::default());
        let mut robot = Env::reset(AgentMode::WholeRobot, sample_cabinet(2, &ranges), 2, EnvParams::default());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert!(sync_environments(&hand, &mut robot, &crate::ik::IkOptions::default(), &mut rng).is_err());
    }

    #[test]
    fn detached_drawer_never_drifts() {
        let mut env = default_env(15);
        env.state.drawer_extension = 0.05;
        let mut a = Action::zero(6);
        a.joint_velocity[0] = -1.0;
        for _ in 0..30 {
            env.step(&a).unwrap();
            assert_eq!(env.state.drawer_extension, 0.05);
            assert_eq!(env.state.drawer_velocity, 0.0);
        }
    }
}
