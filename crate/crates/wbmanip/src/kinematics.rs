//! Rigid-body poses, serial kinematic chains, forward kinematics and
//! geometric Jacobians.
//!
//! Everything here is expressed in the world frame: poses are position +
//! unit quaternion, twists are stacked `[linear; angular]` world-frame
//! vectors, and Jacobian columns map joint rates to world-frame EE twist.

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("joint {index} ({name}): {reason}")]
    InvalidJoint {
        index: usize,
        name: String,
        reason: String,
    },
    #[error("chain `{name}`: {reason}")]
    InvalidChain { name: String, reason: String },
    #[error("failed to parse chain file: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A rigid-body transform: position plus unit quaternion, world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose {
            position: t,
            orientation: UnitQuaternion::identity(),
        }
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(*axis);
        Pose {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::from_axis_angle(&axis, angle),
        }
    }

    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Pose {
            position,
            orientation: UnitQuaternion::new_normalize(orientation.into_inner()),
        }
    }

    /// `self` applied after `other`: the transform mapping a point through
    /// `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let q = self.orientation * other.orientation;
        Pose {
            position: self.position + self.orientation * other.position,
            // renormalize so long chains of compositions stay on the unit sphere
            orientation: UnitQuaternion::new_normalize(q.into_inner()),
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.inverse();
        Pose {
            position: -(inv * self.position),
            orientation: inv,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.orientation * p
    }

    /// Rotation vector (axis * angle, angle in [0, pi]) of the orientation.
    pub fn rotation_vector(q: &UnitQuaternion<f64>) -> Vector3<f64> {
        let mut quat = q.into_inner();
        if quat.w < 0.0 {
            quat = -quat;
        }
        let v = quat.vector();
        let vn = v.norm();
        if vn < 1e-12 {
            // small-angle: log(q) ~ 2 * vector part
            return 2.0 * Vector3::new(v.x, v.y, v.z);
        }
        let angle = 2.0 * vn.atan2(quat.w);
        Vector3::new(v.x, v.y, v.z) / vn * angle
    }
}

/// World-frame spatial velocity: `[linear (m/s); angular (rad/s)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Twist {
            linear: Vector3::zeros(),
            angular: Vector3::zeros(),
        }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Twist {
            linear: Vector3::new(v[0], v[1], v[2]),
            angular: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        )
    }
}

impl std::ops::Add for Twist {
    type Output = Twist;
    fn add(self, rhs: Twist) -> Twist {
        Twist {
            linear: self.linear + rhs.linear,
            angular: self.angular + rhs.angular,
        }
    }
}

/// 6-D task-space error from `current` to `target`.
///
/// Linear part is the position difference; angular part is the rotation
/// vector of the relative quaternion, with angle wrapped to [0, pi].
pub fn pose_error(current: &Pose, target: &Pose) -> Vector6<f64> {
    let lin = target.position - current.position;
    let q_rel = target.orientation * current.orientation.inverse();
    let ang = Pose::rotation_vector(&q_rel);
    Vector6::new(lin.x, lin.y, lin.z, ang.x, ang.y, ang.z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

/// One joint of a serial chain: a fixed offset from the parent frame
/// followed by motion about/along `axis` (expressed in the joint's frame).
#[derive(Debug, Clone)]
pub struct JointSpec {
    pub name: String,
    pub kind: JointKind,
    pub axis: Vector3<f64>,
    pub origin: Pose,
    pub pos_limits: [f64; 2],
    pub vel_limit: f64,
}

/// Ordered serial chain with a fixed EE offset after the last joint.
///
/// The leading `base_joint_count` joints are the "base" partition used by
/// the whole-body controller's cost weighting; the rest are the "arm".
#[derive(Debug, Clone)]
pub struct KinematicChain {
    pub name: String,
    pub joints: Vec<JointSpec>,
    pub ee_offset: Pose,
    pub base_joint_count: usize,
}

/// Joint positions and velocities for a chain with `n` joints.
#[derive(Debug, Clone)]
pub struct Configuration {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

impl Configuration {
    pub fn zero(n: usize) -> Self {
        Configuration {
            q: DVector::zeros(n),
            qdot: DVector::zeros(n),
        }
    }
}

impl KinematicChain {
    /// Number of joints (the joint-space dimension n); the workspace is 6-D.
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        if self.joints.is_empty() {
            return Err(KinematicsError::InvalidChain {
                name: self.name.clone(),
                reason: "chain has no joints".into(),
            });
        }
        if self.base_joint_count < 1 || self.base_joint_count >= self.joints.len() {
            return Err(KinematicsError::InvalidChain {
                name: self.name.clone(),
                reason: format!(
                    "base_joint_count {} must be in [1, {})",
                    self.base_joint_count,
                    self.joints.len()
                ),
            });
        }
        for (i, j) in self.joints.iter().enumerate() {
            if (j.axis.norm() - 1.0).abs() > 1e-9 {
                return Err(KinematicsError::InvalidJoint {
                    index: i,
                    name: j.name.clone(),
                    reason: "non-unit axis".into(),
                });
            }
            if j.pos_limits[0] > j.pos_limits[1] {
                return Err(KinematicsError::InvalidJoint {
                    index: i,
                    name: j.name.clone(),
                    reason: format!(
                        "position limits lo {} > hi {}",
                        j.pos_limits[0], j.pos_limits[1]
                    ),
                });
            }
            if !(j.vel_limit > 0.0) {
                return Err(KinematicsError::InvalidJoint {
                    index: i,
                    name: j.name.clone(),
                    reason: "velocity limit must be > 0".into(),
                });
            }
        }
        Ok(())
    }

    fn check_dim(&self, q: &DVector<f64>) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DimensionMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// EE pose at configuration `q`.
    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Result<Pose, KinematicsError> {
        self.check_dim(q)?;
        let mut frame = Pose::identity();
        for (joint, &qi) in self.joints.iter().zip(q.iter()) {
            frame = frame.compose(&joint.origin);
            frame = frame.compose(&joint_motion(joint, qi));
        }
        Ok(frame.compose(&self.ee_offset))
    }

    /// World-frame geometric Jacobian (6 x n) at configuration `q`.
    ///
    /// Revolute column i: `[w_i x (p_ee - p_i); w_i]`; prismatic: `[w_i; 0]`,
    /// where `w_i` is the joint axis in the world frame and `p_i` the joint
    /// origin.
    pub fn jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>, KinematicsError> {
        self.check_dim(q)?;
        let n = self.dof();
        let mut frame = Pose::identity();
        let mut axes = Vec::with_capacity(n);
        for (joint, &qi) in self.joints.iter().zip(q.iter()) {
            frame = frame.compose(&joint.origin);
            // the joint's own motion leaves its axis direction unchanged
            let world_axis = frame.orientation * joint.axis;
            axes.push((joint.kind, world_axis, frame.position));
            frame = frame.compose(&joint_motion(joint, qi));
        }
        let p_ee = frame.compose(&self.ee_offset).position;

        let mut jac = DMatrix::zeros(6, n);
        for (i, (kind, w, p)) in axes.iter().enumerate() {
            let (lin, ang) = match kind {
                JointKind::Revolute => (w.cross(&(p_ee - p)), *w),
                JointKind::Prismatic => (*w, Vector3::zeros()),
            };
            jac[(0, i)] = lin.x;
            jac[(1, i)] = lin.y;
            jac[(2, i)] = lin.z;
            jac[(3, i)] = ang.x;
            jac[(4, i)] = ang.y;
            jac[(5, i)] = ang.z;
        }
        Ok(jac)
    }

    /// Clamp every entry of `q` into its joint's position limits.
    pub fn clamp_to_limits(&self, q: &mut DVector<f64>) {
        for (qi, joint) in q.iter_mut().zip(&self.joints) {
            *qi = qi.clamp(joint.pos_limits[0], joint.pos_limits[1]);
        }
    }

    /// Per-joint velocity limits as a vector.
    pub fn velocity_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.vel_limit))
    }

    /// Draw a uniformly random in-limit configuration.
    pub fn random_configuration<R: rand::Rng>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.dof(),
            self.joints
                .iter()
                .map(|j| rng.gen_range(j.pos_limits[0]..=j.pos_limits[1])),
        )
    }
}

fn joint_motion(joint: &JointSpec, qi: f64) -> Pose {
    match joint.kind {
        JointKind::Revolute => Pose::from_axis_angle(&joint.axis, qi),
        JointKind::Prismatic => Pose::from_translation(joint.axis * qi),
    }
}

// ---------------------------------------------------------------------------
// Chain description files
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct PoseRepr {
    pos: [f64; 3],
    /// (w, x, y, z)
    quat: [f64; 4],
}

impl PoseRepr {
    fn to_pose(&self) -> Pose {
        let q = nalgebra::Quaternion::new(self.quat[0], self.quat[1], self.quat[2], self.quat[3]);
        Pose {
            position: Vector3::new(self.pos[0], self.pos[1], self.pos[2]),
            orientation: UnitQuaternion::new_normalize(q),
        }
    }

    fn from_pose(p: &Pose) -> Self {
        let q = p.orientation.into_inner();
        PoseRepr {
            pos: [p.position.x, p.position.y, p.position.z],
            quat: [q.w, q.i, q.j, q.k],
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JointRepr {
    name: String,
    kind: JointKind,
    axis: [f64; 3],
    origin: PoseRepr,
    pos_limits: [f64; 2],
    vel_limit: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ChainRepr {
    name: String,
    joints: Vec<JointRepr>,
    ee_offset: PoseRepr,
    base_joint_count: usize,
}

/// Parse a chain description (JSON) and validate every invariant.
pub fn load_chain_str(text: &str) -> Result<KinematicChain, KinematicsError> {
    let repr: ChainRepr =
        serde_json::from_str(text).map_err(|e| KinematicsError::Parse(e.to_string()))?;
    let chain = KinematicChain {
        name: repr.name,
        joints: repr
            .joints
            .into_iter()
            .map(|j| JointSpec {
                name: j.name,
                kind: j.kind,
                axis: Vector3::new(j.axis[0], j.axis[1], j.axis[2]),
                origin: j.origin.to_pose(),
                pos_limits: j.pos_limits,
                vel_limit: j.vel_limit,
            })
            .collect(),
        ee_offset: repr.ee_offset.to_pose(),
        base_joint_count: repr.base_joint_count,
    };
    chain.validate()?;
    Ok(chain)
}

pub fn load_chain(path: &Path) -> Result<KinematicChain, KinematicsError> {
    let text = std::fs::read_to_string(path)?;
    load_chain_str(&text)
}

/// Serialize a chain back to its file representation.
pub fn chain_to_json(chain: &KinematicChain) -> String {
    let repr = ChainRepr {
        name: chain.name.clone(),
        joints: chain
            .joints
            .iter()
            .map(|j| JointRepr {
                name: j.name.clone(),
                kind: j.kind,
                axis: [j.axis.x, j.axis.y, j.axis.z],
                origin: PoseRepr::from_pose(&j.origin),
                pos_limits: j.pos_limits,
                vel_limit: j.vel_limit,
            })
            .collect(),
        ee_offset: PoseRepr::from_pose(&chain.ee_offset),
        base_joint_count: chain.base_joint_count,
    };
    serde_json::to_string_pretty(&repr).expect("chain serialization cannot fail")
}

pub const FLOATING_HAND_JSON: &str = include_str!("../assets/chains/floating_hand.json");
pub const MOBILE_FRANKA_JSON: &str = include_str!("../assets/chains/mobile_franka.json");

/// The 6-DoF free-floating gripper: 3 prismatic + 3 revolute virtual joints.
pub fn floating_hand() -> KinematicChain {
    load_chain_str(FLOATING_HAND_JSON).expect("bundled floating_hand chain is valid")
}

/// The 11-DoF mobile manipulator: planar base + torso lift + 7-DoF arm.
pub fn mobile_franka() -> KinematicChain {
    load_chain_str(MOBILE_FRANKA_JSON).expect("bundled mobile_franka chain is valid")
}

/// Look up a bundled chain file by name.
pub fn bundled_chain(name: &str) -> Option<&'static str> {
    match name {
        "floating_hand" => Some(FLOATING_HAND_JSON),
        "mobile_franka" => Some(MOBILE_FRANKA_JSON),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Planar 2R arm in the x-y plane with the given link lengths.
    pub(crate) fn planar_2r(l1: f64, l2: f64) -> KinematicChain {
        let joint = |name: &str, origin_x: f64| JointSpec {
            name: name.into(),
            kind: JointKind::Revolute,
            axis: Vector3::z(),
            origin: Pose::from_translation(Vector3::new(origin_x, 0.0, 0.0)),
            pos_limits: [-std::f64::consts::PI, std::f64::consts::PI],
            vel_limit: std::f64::consts::PI,
        };
        KinematicChain {
            name: "planar_2r".into(),
            joints: vec![joint("shoulder", 0.0), joint("elbow", l1)],
            ee_offset: Pose::from_translation(Vector3::new(l2, 0.0, 0.0)),
            base_joint_count: 1,
        }
    }

    /// 4x4 homogeneous matrix oracle for pose composition.
    fn homogeneous(p: &Pose) -> nalgebra::Matrix4<f64> {
        let mut m = nalgebra::Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&p.orientation.to_rotation_matrix().into_inner());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.position);
        m
    }

    /// Central finite differences of FK, h = 1e-6.
    pub(crate) fn fd_jacobian(chain: &KinematicChain, q: &DVector<f64>) -> DMatrix<f64> {
        let h = 1e-6;
        let n = chain.dof();
        let mut jac = DMatrix::zeros(6, n);
        for i in 0..n {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += h;
            qm[i] -= h;
            let fp = chain.forward_kinematics(&qp).unwrap();
            let fm = chain.forward_kinematics(&qm).unwrap();
            let diff = pose_error(&fm, &fp) / (2.0 * h);
            for r in 0..6 {
                jac[(r, i)] = diff[r];
            }
        }
        jac
    }

    #[test]
    fn compose_identity() {
        let id = Pose::identity();
        let c = id.compose(&id);
        assert_eq!(c.position, Vector3::zeros());
        assert_relative_eq!(c.orientation.angle(), 0.0);
    }

    #[test]
    fn compose_translations_commute() {
        let a = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let b = Pose::from_translation(Vector3::new(0.0, 2.0, 0.0));
        let c = a.compose(&b);
        assert_relative_eq!(c.position, Vector3::new(1.0, 2.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn compose_rotation_then_translation() {
        // rot z by pi/2 applied after translate(1,0,0): the translation is
        // rotated into +y
        let rot = Pose::from_axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2);
        let tr = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let c = rot.compose(&tr);
        assert_relative_eq!(c.position, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(c.orientation.angle(), std::f64::consts::FRAC_PI_2, epsilon = 1e-12);

        // cross-check against the homogeneous-matrix oracle
        let oracle = homogeneous(&rot) * homogeneous(&tr);
        let ours = homogeneous(&c);
        assert_relative_eq!(oracle, ours, epsilon = 1e-12);
    }

    #[test]
    fn compose_associative_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let rand_pose = |rng: &mut ChaCha8Rng| {
                let axis = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                let p = Pose::from_axis_angle(&axis, rng.gen_range(-3.0..3.0));
                Pose {
                    position: Vector3::new(
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-2.0..2.0),
                    ),
                    orientation: p.orientation,
                }
            };
            let (a, b, c) = (rand_pose(&mut rng), rand_pose(&mut rng), rand_pose(&mut rng));
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            assert_relative_eq!(left.position, right.position, epsilon = 1e-9);
            assert!(left.orientation.angle_to(&right.orientation) < 1e-9);

            let e = a.compose(&a.inverse());
            assert!(e.position.norm() < 1e-9);
            assert!(e.orientation.angle() < 1e-9);
        }
    }

    #[test]
    fn pose_error_cases() {
        let p = Pose::from_translation(Vector3::new(0.3, -0.1, 0.2));
        assert_relative_eq!(pose_error(&p, &p).amax(), 0.0);

        let t = Pose::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let e = pose_error(&Pose::identity(), &t);
        assert_relative_eq!(e[0], 0.1, epsilon = 1e-12);
        assert_relative_eq!(e.rows(1, 5).amax(), 0.0, epsilon = 1e-12);

        let r = Pose::from_axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2);
        let e = pose_error(&Pose::identity(), &r);
        assert_relative_eq!(e[5], std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn pose_error_angle_wraps_to_pi() {
        // 3pi/2 about z is the same rotation as -pi/2; the reported angle
        // magnitude must stay in [0, pi]
        let r = Pose::from_axis_angle(&Vector3::z(), 3.0 * std::f64::consts::FRAC_PI_2);
        let e = pose_error(&Pose::identity(), &r);
        assert_relative_eq!(e[5], -std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn fk_zero_configuration_is_offset_product() {
        let chain = mobile_franka();
        let mut q = DVector::zeros(chain.dof());
        // stay inside limits (arm_4 excludes zero)
        q[7] = -0.1;
        let pose = chain.forward_kinematics(&q).unwrap();
        assert!(pose.position.norm() > 0.0);

        // hand chain at zero q: EE at the identity offset
        let hand = floating_hand();
        let p = hand.forward_kinematics(&DVector::zeros(6)).unwrap();
        assert_relative_eq!(p.position.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn fk_planar_2r_analytic() {
        let chain = planar_2r(1.0, 1.0);
        let q = DVector::from_vec(vec![std::f64::consts::FRAC_PI_2, 0.0]);
        let p = chain.forward_kinematics(&q).unwrap();
        assert_relative_eq!(p.position, Vector3::new(0.0, 2.0, 0.0), epsilon = 1e-12);

        // full analytic formula on random q
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let q1: f64 = rng.gen_range(-3.0..3.0);
            let q2: f64 = rng.gen_range(-3.0..3.0);
            let p = chain
                .forward_kinematics(&DVector::from_vec(vec![q1, q2]))
                .unwrap();
            assert_relative_eq!(p.position.x, q1.cos() + (q1 + q2).cos(), epsilon = 1e-12);
            assert_relative_eq!(p.position.y, q1.sin() + (q1 + q2).sin(), epsilon = 1e-12);
        }
    }

    #[test]
    fn fk_prismatic_translates_along_axis() {
        let chain = floating_hand();
        let q = DVector::from_vec(vec![0.0, 0.0, 0.5, 0.0, 0.0, 0.0]);
        let p = chain.forward_kinematics(&q).unwrap();
        assert_relative_eq!(p.position, Vector3::new(0.0, 0.0, 0.5), epsilon = 1e-12);
    }

    #[test]
    fn fk_dimension_mismatch() {
        let chain = floating_hand();
        assert!(matches!(
            chain.forward_kinematics(&DVector::zeros(5)),
            Err(KinematicsError::DimensionMismatch { expected: 6, got: 5 })
        ));
        assert!(chain.jacobian(&DVector::zeros(7)).is_err());
    }

    #[test]
    fn jacobian_planar_2r_zero_config() {
        let chain = planar_2r(1.0, 1.0);
        let jac = chain.jacobian(&DVector::zeros(2)).unwrap();
        assert_relative_eq!(jac[(0, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(jac[(1, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(jac[(1, 1)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(jac[(5, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(jac[(5, 1)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn jacobian_prismatic_column() {
        let chain = floating_hand();
        let jac = chain.jacobian(&DVector::zeros(6)).unwrap();
        // virtual_z column
        let expected = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        for (r, e) in expected.iter().enumerate() {
            assert_relative_eq!(jac[(r, 2)], *e, epsilon = 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for chain in [floating_hand(), mobile_franka()] {
            for _ in 0..50 {
                let q = chain.random_configuration(&mut rng);
                let jac = chain.jacobian(&q).unwrap();
                let fd = fd_jacobian(&chain, &q);
                assert!(
                    (jac - fd).amax() < 1e-6,
                    "FD mismatch on chain {}",
                    chain.name
                );
            }
        }
    }

    #[test]
    fn velocity_twist_first_order_consistency() {
        // pose_error(FK(q), FK(q + qdot dt)) / dt -> J qdot as dt -> 0
        let chain = mobile_franka();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = chain.random_configuration(&mut rng);
        let qdot = DVector::from_fn(chain.dof(), |_, _| rng.gen_range(-1.0..1.0));
        let jqd = chain.jacobian(&q).unwrap() * &qdot;
        let err_at = |dt: f64| {
            let f0 = chain.forward_kinematics(&q).unwrap();
            let f1 = chain.forward_kinematics(&(&q + &qdot * dt)).unwrap();
            let mut v = pose_error(&f0, &f1) / dt;
            for r in 0..6 {
                v[r] -= jqd[r];
            }
            v.amax()
        };
        let e1 = err_at(1e-3);
        let e2 = err_at(1e-4);
        assert!(e1 < 1e-2);
        assert!(e2 < e1 / 3.0, "error should shrink first-order: {e1} vs {e2}");
    }

    #[test]
    fn fk_quaternion_stays_normalized() {
        let chain = mobile_franka();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..1000 {
            let q = chain.random_configuration(&mut rng);
            let pose = chain.forward_kinematics(&q).unwrap();
            assert!((pose.orientation.into_inner().norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bundled_chains_load() {
        let hand = floating_hand();
        assert_eq!(hand.dof(), 6);
        assert_eq!(
            hand.joints
                .iter()
                .filter(|j| j.kind == JointKind::Prismatic)
                .count(),
            3
        );
        let robot = mobile_franka();
        assert_eq!(robot.dof(), 11);
        assert_eq!(robot.base_joint_count, 4);
    }

    #[test]
    fn chain_json_round_trip() {
        let chain = mobile_franka();
        let text = chain_to_json(&chain);
        let again = load_chain_str(&text).unwrap();
        assert_eq!(again.dof(), chain.dof());
        assert_eq!(again.base_joint_count, chain.base_joint_count);
        for (a, b) in chain.joints.iter().zip(&again.joints) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.kind, b.kind);
            assert_relative_eq!(a.axis, b.axis, epsilon = 1e-15);
        }
    }

    #[test]
    fn load_chain_rejects_bad_axis_and_limits() {
        let mut bad = serde_json::from_str::<serde_json::Value>(FLOATING_HAND_JSON).unwrap();
        bad["joints"][0]["axis"] = serde_json::json!([0.0, 0.0, 2.0]);
        let err = load_chain_str(&bad.to_string()).unwrap_err();
        assert!(err.to_string().contains("non-unit axis"), "{err}");

        let mut bad = serde_json::from_str::<serde_json::Value>(FLOATING_HAND_JSON).unwrap();
        bad["joints"][2]["pos_limits"] = serde_json::json!([1.0, -1.0]);
        let err = load_chain_str(&bad.to_string()).unwrap_err();
        assert!(err.to_string().contains("virtual_z"), "{err}");

        assert!(load_chain_str("{ not json").is_err());
    }

    #[test]
    fn twist_addition_identity() {
        let t = Twist {
            linear: Vector3::new(0.1, 0.2, 0.3),
            angular: Vector3::new(-0.1, 0.0, 0.5),
        };
        let sum = t + Twist::zero();
        assert_eq!(sum, t);
        assert_eq!(Twist::from_vector(&t.to_vector()), t);
    }
}
