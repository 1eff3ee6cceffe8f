//! Static robot description: legs, DH chains, joint limits, controller
//! parameters, gait library and joint-space sequences.
//!
//! Everything here is immutable after loading. Documents are TOML; see
//! `docs/config.md` at the repository root for the schema.

mod config;
mod gait;

pub use config::{load_robot_spec, robot_spec_digest, serialize_robot_spec};
pub use gait::{default_gait_library, load_gait_library, serialize_gait_library, GaitSpec, DEFAULT_GAITS_TOML};

use crate::kinematics::Transform;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_LEGS: usize = 8;
pub const MAX_JOINTS_PER_LEG: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid {field}: {message}")]
    Invalid { field: String, message: String },
}

impl ModelError {
    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type ModelResult<T> = Result<T, ModelError>;

/// Which DH field the joint variable drives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActuatedField {
    #[default]
    Theta,
    /// Prismatic joints; recognised by the parser but rejected by validation.
    D,
}

/// Denavit-Hartenberg parameters of one joint. For a revolute joint the
/// joint angle is added to `theta`, which then acts as a fixed offset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DhParam {
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub d: f64,
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub actuated: ActuatedField,
}

impl DhParam {
    pub fn revolute(theta: f64, d: f64, a: f64, alpha: f64) -> Self {
        Self {
            theta,
            d,
            a,
            alpha,
            actuated: ActuatedField::Theta,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub position_min: f64,
    pub position_max: f64,
    pub velocity_max: f64,
    #[serde(default = "one")]
    pub jla_weight: f64,
    #[serde(default)]
    pub home_angle: f64,
    #[serde(default)]
    pub packed_angle: f64,
}

impl JointSpec {
    pub fn range(&self) -> f64 {
        self.position_max - self.position_min
    }

    pub fn centre(&self) -> f64 {
        0.5 * (self.position_max + self.position_min)
    }

    pub fn contains(&self, q: f64) -> bool {
        q >= self.position_min && q <= self.position_max
    }

    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.position_min, self.position_max)
    }
}

/// One actuated joint of a leg: limits plus its DH row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegJoint {
    #[serde(flatten)]
    pub spec: JointSpec,
    pub dh: DhParam,
}

/// Translation plus roll/pitch/yaw, the serialised form of a [`Transform`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl Pose {
    pub fn to_transform(&self) -> Transform {
        Transform::from_xyz_rpy(Vector3::from(self.xyz), Vector3::from(self.rpy))
    }

    pub fn from_transform(t: &Transform) -> Self {
        let p = t.translation();
        let r = t.rpy();
        Self {
            xyz: [p.x, p.y, p.z],
            rpy: [r.x, r.y, r.z],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegSpec {
    /// 1-based, clockwise from the front right leg.
    pub id: u8,
    /// Leg frame relative to the body frame.
    pub base_frame: Pose,
    /// Stance tip position in the body frame.
    pub default_tip: [f64; 3],
    /// Constrain the tip orientation during IK (legs with at least 5 joints).
    #[serde(default)]
    pub orientation_constraint: bool,
    pub joints: Vec<LegJoint>,
}

impl LegSpec {
    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn base_transform(&self) -> Transform {
        self.base_frame.to_transform()
    }

    pub fn default_tip(&self) -> Vector3<f64> {
        Vector3::from(self.default_tip)
    }

    pub fn link_length_sum(&self) -> f64 {
        self.joints.iter().map(|j| j.dh.a.abs() + j.dh.d.abs()).sum()
    }

    pub fn home_angles(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.spec.home_angle).collect()
    }

    pub fn packed_angles(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.spec.packed_angle).collect()
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.len() == self.joints.len() && self.joints.iter().zip(q).all(|(j, &v)| j.spec.contains(v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseLimits {
    pub translation: [f64; 3],
    pub rotation: [f64; 3],
}

impl PoseLimits {
    pub fn as_array(&self) -> [f64; 6] {
        let t = self.translation;
        let r = self.rotation;
        [t[0], t[1], t[2], r[0], r[1], r[2]]
    }
}

impl Default for PoseLimits {
    fn default() -> Self {
        Self {
            translation: [0.05, 0.05, 0.05],
            rotation: [0.25, 0.25, 0.25],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: 0.5,
            ki: 2.0,
            kd: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmittanceParams {
    #[serde(default)]
    pub enabled: bool,
    /// Virtual mass, kg.
    pub mass: f64,
    /// Virtual damping, N·s/m.
    pub damping: f64,
    /// Virtual stiffness, N/m.
    pub stiffness: f64,
}

impl Default for AdmittanceParams {
    fn default() -> Self {
        Self {
            enabled: false,
            mass: 0.1,
            damping: 5.0,
            stiffness: 1000.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JlaParams {
    /// Exponent of the p-norm cost; even, at least 2.
    pub p: u32,
    pub position_weight: f64,
    pub velocity_weight: f64,
    /// Cap on the null-space vector norm before projection, rad.
    #[serde(default = "default_jla_cap")]
    pub max_norm: f64,
}

fn default_jla_cap() -> f64 {
    0.01
}

impl Default for JlaParams {
    fn default() -> Self {
        Self {
            p: 2,
            position_weight: 0.01,
            velocity_weight: 0.0,
            max_norm: default_jla_cap(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkParams {
    /// Tip position tolerance, m.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Largest task-space correction per iteration, m.
    pub max_step: f64,
    /// Weight of orientation rows when the tip orientation is constrained.
    pub orientation_weight: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 50,
            max_step: 0.05,
            orientation_weight: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkParams {
    pub default_gait: String,
    /// m/s².
    pub max_linear_acceleration: f64,
    /// rad/s².
    pub max_angular_acceleration: f64,
    /// Lateral offset of the swing interior control points, m.
    pub swing_width: f64,
    /// Depth below the walk plane at touchdown, m.
    pub swing_depth: f64,
    /// Lower step frequency at the next cycle boundary after joint velocity clamping.
    pub adaptive_step_frequency: bool,
}

impl Default for WalkParams {
    fn default() -> Self {
        Self {
            default_gait: "tripod".into(),
            max_linear_acceleration: 1.0,
            max_angular_acceleration: 2.0,
            swing_width: 0.0,
            swing_depth: 0.0,
            adaptive_step_frequency: false,
        }
    }
}

/// Cyclic body pose offsets keyed to the gait phase. Each axis follows
/// `amplitude · cos(2π(φ − phase))` with φ the gait phase fraction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoPoseParams {
    /// x, y, z (m) then roll, pitch, yaw (rad).
    pub amplitude: [f64; 6],
    /// Phase fraction in [0, 1) at which each axis peaks.
    pub phase: [f64; 6],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseParams {
    /// Limits applied to the composed body pose relative to the walk plane pose.
    pub body_limits: PoseLimits,
    /// Clamp of the IMU correction, rad (roll, pitch).
    pub imu_limit: f64,
    pub walk_plane_time_constant: f64,
    pub mode_blend_time: f64,
    pub auto_pose: AutoPoseParams,
    /// Shift the body uphill on inclines.
    pub inclination: bool,
}

impl Default for PoseParams {
    fn default() -> Self {
        Self {
            body_limits: PoseLimits {
                translation: [0.1, 0.1, 0.1],
                rotation: [0.4, 0.4, 0.4],
            },
            imu_limit: 0.3,
            walk_plane_time_constant: 1.0,
            mode_blend_time: 0.5,
            auto_pose: AutoPoseParams::default(),
            inclination: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TouchdownParams {
    /// |F_z| threshold, N.
    pub threshold: f64,
    /// Consecutive ticks required to change state.
    pub ticks: u32,
}

impl Default for TouchdownParams {
    fn default() -> Self {
        Self {
            threshold: 5.0,
            ticks: 3,
        }
    }
}

/// Constants of the simulated power draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerParams {
    /// W.
    pub idle: f64,
    /// W per N·m of holding torque.
    pub holding: f64,
    /// Multiplier on mechanical power |τ·ω|.
    pub motion: f64,
    /// Supply voltage, V.
    pub supply_voltage: f64,
    /// Lumped leg mass at the tip, kg; zero means massless legs.
    pub leg_mass: f64,
}

impl Default for PowerParams {
    fn default() -> Self {
        Self {
            idle: 28.0,
            holding: 1.0,
            motion: 3.0,
            supply_voltage: 25.0,
            leg_mass: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    /// Nominal segment duration, s.
    pub duration: f64,
    /// Target angles, one list per leg in leg order.
    pub angles: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub name: String,
    pub keyframes: Vec<Keyframe>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub name: String,
    pub mass: f64,
    pub body_clearance: f64,
    pub step_clearance: f64,
    pub step_frequency: f64,
    #[serde(default = "default_lambda")]
    pub ik_lambda: f64,
    #[serde(default)]
    pub max_manual_pose: PoseLimits,
    #[serde(default)]
    pub imu_pid_gains: PidGains,
    #[serde(default)]
    pub admittance: AdmittanceParams,
    #[serde(default)]
    pub jla: JlaParams,
    #[serde(default)]
    pub ik: IkParams,
    #[serde(default)]
    pub walk: WalkParams,
    #[serde(default)]
    pub pose: PoseParams,
    #[serde(default)]
    pub touchdown: TouchdownParams,
    #[serde(default)]
    pub power: PowerParams,
    #[serde(default)]
    pub sequences: Vec<SequenceSpec>,
    pub legs: Vec<LegSpec>,
}

fn default_lambda() -> f64 {
    0.05
}

impl RobotSpec {
    pub fn leg_count(&self) -> usize {
        self.legs.len()
    }

    pub fn joint_count(&self) -> usize {
        self.legs.iter().map(LegSpec::joint_count).sum()
    }

    pub fn leg_index(&self, id: u8) -> Option<usize> {
        self.legs.iter().position(|l| l.id == id)
    }

    pub fn sequence(&self, name: &str) -> Option<&SequenceSpec> {
        self.sequences.iter().find(|s| s.name == name)
    }

    /// Checks every invariant; never corrects a value.
    pub fn validate(&self) -> ModelResult<()> {
        validate_robot(self)
    }
}

fn finite(field: &str, v: f64) -> ModelResult<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(ModelError::invalid(field, "must be finite"))
    }
}

fn positive(field: &str, v: f64) -> ModelResult<()> {
    finite(field, v)?;
    if v > 0.0 {
        Ok(())
    } else {
        Err(ModelError::invalid(field, format!("must be > 0 (got {v})")))
    }
}

fn non_negative(field: &str, v: f64) -> ModelResult<()> {
    finite(field, v)?;
    if v >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::invalid(field, format!("must be >= 0 (got {v})")))
    }
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut w = a % two_pi;
    if w > std::f64::consts::PI {
        w -= two_pi;
    } else if w <= -std::f64::consts::PI {
        w += two_pi;
    }
    w
}

fn validate_robot(spec: &RobotSpec) -> ModelResult<()> {
    if spec.name.trim().is_empty() {
        return Err(ModelError::invalid("name", "must not be empty"));
    }
    if spec.legs.is_empty() {
        return Err(ModelError::invalid("legs", "at least one leg is required"));
    }
    if spec.legs.len() > MAX_LEGS {
        return Err(ModelError::invalid("legs", format!("leg count exceeds {MAX_LEGS}")));
    }
    positive("mass", spec.mass)?;
    positive("body_clearance", spec.body_clearance)?;
    positive("step_clearance", spec.step_clearance)?;
    positive("step_frequency", spec.step_frequency)?;
    positive("ik_lambda", spec.ik_lambda)?;
    for (i, v) in spec.max_manual_pose.as_array().iter().enumerate() {
        non_negative(&format!("max_manual_pose[{i}]"), *v)?;
    }
    let g = spec.imu_pid_gains;
    non_negative("imu_pid_gains.kp", g.kp)?;
    non_negative("imu_pid_gains.ki", g.ki)?;
    non_negative("imu_pid_gains.kd", g.kd)?;
    let a = spec.admittance;
    positive("admittance.mass", a.mass)?;
    positive("admittance.damping", a.damping)?;
    positive("admittance.stiffness", a.stiffness)?;
    let j = spec.jla;
    if j.p < 2 || j.p % 2 != 0 {
        return Err(ModelError::invalid("jla.p", format!("must be an even integer >= 2 (got {})", j.p)));
    }
    non_negative("jla.position_weight", j.position_weight)?;
    non_negative("jla.velocity_weight", j.velocity_weight)?;
    non_negative("jla.max_norm", j.max_norm)?;
    positive("ik.tolerance", spec.ik.tolerance)?;
    positive("ik.max_step", spec.ik.max_step)?;
    non_negative("ik.orientation_weight", spec.ik.orientation_weight)?;
    if spec.ik.max_iterations == 0 {
        return Err(ModelError::invalid("ik.max_iterations", "must be > 0"));
    }
    positive("walk.max_linear_acceleration", spec.walk.max_linear_acceleration)?;
    positive("walk.max_angular_acceleration", spec.walk.max_angular_acceleration)?;
    non_negative("walk.swing_width", spec.walk.swing_width.abs())?;
    non_negative("walk.swing_depth", spec.walk.swing_depth)?;
    for (i, v) in spec.pose.body_limits.as_array().iter().enumerate() {
        non_negative(&format!("pose.body_limits[{i}]"), *v)?;
    }
    non_negative("pose.imu_limit", spec.pose.imu_limit)?;
    positive("pose.walk_plane_time_constant", spec.pose.walk_plane_time_constant)?;
    positive("pose.mode_blend_time", spec.pose.mode_blend_time)?;
    for i in 0..6 {
        finite(&format!("pose.auto_pose.amplitude[{i}]"), spec.pose.auto_pose.amplitude[i])?;
        finite(&format!("pose.auto_pose.phase[{i}]"), spec.pose.auto_pose.phase[i])?;
    }
    positive("touchdown.threshold", spec.touchdown.threshold)?;
    if spec.touchdown.ticks == 0 {
        return Err(ModelError::invalid("touchdown.ticks", "must be > 0"));
    }
    let p = spec.power;
    non_negative("power.idle", p.idle)?;
    non_negative("power.holding", p.holding)?;
    non_negative("power.motion", p.motion)?;
    positive("power.supply_voltage", p.supply_voltage)?;
    non_negative("power.leg_mass", p.leg_mass)?;

    let mut prev_id = 0u8;
    for (li, leg) in spec.legs.iter().enumerate() {
        let lf = format!("legs[{li}]");
        if leg.id < 1 || leg.id as usize > MAX_LEGS {
            return Err(ModelError::invalid(format!("{lf}.id"), format!("must be in 1..={MAX_LEGS} (got {})", leg.id)));
        }
        if leg.id <= prev_id {
            return Err(ModelError::invalid(
                format!("{lf}.id"),
                "leg ids must be unique and listed in increasing order",
            ));
        }
        prev_id = leg.id;
        if leg.joints.is_empty() || leg.joints.len() > MAX_JOINTS_PER_LEG {
            return Err(ModelError::invalid(
                format!("{lf}.joints"),
                format!("joint count must be in 1..={MAX_JOINTS_PER_LEG} (got {})", leg.joints.len()),
            ));
        }
        for (k, v) in leg.base_frame.xyz.iter().chain(&leg.base_frame.rpy).enumerate() {
            finite(&format!("{lf}.base_frame[{k}]"), *v)?;
        }
        for (k, v) in leg.default_tip.iter().enumerate() {
            finite(&format!("{lf}.default_tip[{k}]"), *v)?;
        }
        for (ji, joint) in leg.joints.iter().enumerate() {
            let jf = format!("{lf}.joints[{ji}]");
            let s = &joint.spec;
            finite(&format!("{jf}.position_min"), s.position_min)?;
            finite(&format!("{jf}.position_max"), s.position_max)?;
            if s.position_min >= s.position_max {
                return Err(ModelError::invalid(
                    format!("{jf}.position_min"),
                    "position_min must be < position_max",
                ));
            }
            positive(&format!("{jf}.velocity_max"), s.velocity_max)?;
            non_negative(&format!("{jf}.jla_weight"), s.jla_weight)?;
            if !s.contains(s.home_angle) {
                return Err(ModelError::invalid(format!("{jf}.home_angle"), "outside joint limits"));
            }
            if !s.contains(s.packed_angle) {
                return Err(ModelError::invalid(format!("{jf}.packed_angle"), "outside joint limits"));
            }
            let dh = joint.dh;
            for (name, v) in [("theta", dh.theta), ("d", dh.d), ("a", dh.a), ("alpha", dh.alpha)] {
                finite(&format!("{jf}.dh.{name}"), v)?;
            }
            if dh.a < 0.0 {
                return Err(ModelError::invalid(format!("{jf}.dh.a"), "must be >= 0"));
            }
            if dh.actuated != ActuatedField::Theta {
                return Err(ModelError::invalid(
                    format!("{jf}.dh.actuated"),
                    "only revolute (theta-actuated) joints are supported",
                ));
            }
        }
    }

    if spec.legs.len() >= 3 {
        let bearings: Vec<f64> = spec
            .legs
            .iter()
            .map(|l| l.default_tip[1].atan2(l.default_tip[0]))
            .collect();
        let mut total = 0.0;
        for i in 1..bearings.len() {
            let step = wrap_angle(bearings[i] - bearings[i - 1]);
            if step >= 0.0 {
                return Err(ModelError::invalid(
                    format!("legs[{i}].id"),
                    "legs must be numbered clockwise (viewed from above) starting at the front right",
                ));
            }
            total += step;
        }
        if total <= -std::f64::consts::TAU {
            return Err(ModelError::invalid("legs", "leg numbering wraps more than one full turn"));
        }
    }

    for (si, seq) in spec.sequences.iter().enumerate() {
        let sf = format!("sequences[{si}]");
        if seq.keyframes.is_empty() {
            return Err(ModelError::invalid(format!("{sf}.keyframes"), "must not be empty"));
        }
        for (ki, kf) in seq.keyframes.iter().enumerate() {
            let kff = format!("{sf}.keyframes[{ki}]");
            positive(&format!("{kff}.duration"), kf.duration)?;
            if kf.angles.len() != spec.legs.len() {
                return Err(ModelError::invalid(
                    format!("{kff}.angles"),
                    format!("expected {} leg rows, got {}", spec.legs.len(), kf.angles.len()),
                ));
            }
            for (li, (row, leg)) in kf.angles.iter().zip(&spec.legs).enumerate() {
                if row.len() != leg.joints.len() {
                    return Err(ModelError::invalid(
                        format!("{kff}.angles[{li}]"),
                        format!("expected {} joint angles, got {}", leg.joints.len(), row.len()),
                    ));
                }
                for (ji, (&q, joint)) in row.iter().zip(&leg.joints).enumerate() {
                    finite(&format!("{kff}.angles[{li}][{ji}]"), q)?;
                    if !joint.spec.contains(q) {
                        return Err(ModelError::invalid(
                            format!("{kff}.angles[{li}][{ji}]"),
                            format!("{q} outside joint limits of {}", joint.spec.name),
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}
