//! Body pose generation: manual, IMU, inclination, walk-plane and automatic
//! sub-poses composed into the body pose, plus joint-space sequences.

mod sequence;

pub use sequence::{plan_sequence, SequencePlayer};

use crate::kinematics::Transform;
use crate::model::{AutoPoseParams, PidGains, PoseLimits, PoseParams, RobotSpec};
use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("invalid sequence: {0}")]
    Sequence(String),
}

/// Translation + roll/pitch/yaw as a flat 6-vector.
pub type Pose6 = [f64; 6];

fn pose_about(centre: f64, v: &Pose6) -> Transform {
    // rotations pivot about the nominal body centre, not the ground origin
    let c = Transform::trans_z(centre);
    let h = Transform::from_xyz_rpy(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]));
    c * h * c.inverse()
}

fn clamp6(v: &mut Pose6, limits: &[f64; 6]) -> bool {
    let mut hit = false;
    for (x, l) in v.iter_mut().zip(limits) {
        if x.abs() > *l {
            *x = x.clamp(-l, *l);
            hit = true;
        }
    }
    hit
}

/// Integrates a pose velocity into the manual pose and clamps each axis.
pub fn manual_pose_update(manual: &mut Pose6, velocity: &Pose6, dt: f64, limits: &PoseLimits) -> bool {
    for (m, v) in manual.iter_mut().zip(velocity) {
        *m += v * dt;
    }
    clamp6(manual, &limits.as_array())
}

/// Two-axis (roll, pitch) PID with output clamp and conditional-integration anti-windup.
#[derive(Clone, Debug, PartialEq)]
pub struct Pid {
    pub gains: PidGains,
    pub limit: f64,
    integral: [f64; 2],
    previous: Option<[f64; 2]>,
}

impl Pid {
    pub fn new(gains: PidGains, limit: f64) -> Self {
        Self {
            gains,
            limit,
            integral: [0.0; 2],
            previous: None,
        }
    }

    pub fn reset(&mut self) {
        self.integral = [0.0; 2];
        self.previous = None;
    }

    pub fn update(&mut self, error: [f64; 2], dt: f64) -> [f64; 2] {
        let g = self.gains;
        let mut out = [0.0; 2];
        for i in 0..2 {
            let d = self.previous.map_or(0.0, |p| (error[i] - p[i]) / dt);
            let trial = self.integral[i] + error[i] * dt;
            let u = g.kp * error[i] + g.ki * trial + g.kd * d;
            // hold the integral while saturated and still pushing outward
            if u.abs() <= self.limit || u.signum() != error[i].signum() {
                self.integral[i] = trial;
            }
            let u = g.kp * error[i] + g.ki * self.integral[i] + g.kd * d;
            out[i] = u.clamp(-self.limit, self.limit);
        }
        self.previous = Some(error);
        out
    }
}

/// Horizontal body shift putting the centre of mass back over the feet on
/// a slope: `x = −h·tan(pitch)`, `y = h·tan(roll)`.
pub fn inclination_shift(incline_roll_pitch: [f64; 2], clearance: f64) -> Pose6 {
    let [roll, pitch] = incline_roll_pitch;
    [-clearance * pitch.tan(), clearance * roll.tan(), 0.0, 0.0, 0.0, 0.0]
}

/// Roll/pitch of the ground frame from an IMU reading of the body and the
/// body's rotation relative to that frame.
pub fn ground_incline(imu_roll_pitch: [f64; 2], body_relative: &Matrix3<f64>) -> [f64; 2] {
    let rb = Rotation3::from_euler_angles(imu_roll_pitch[0], imu_roll_pitch[1], 0.0);
    let rg = rb.matrix() * body_relative.transpose();
    let (r, p, _) = Rotation3::from_matrix_unchecked(rg).euler_angles();
    [r, p]
}

/// Least-squares plane `z = a·x + b·y + c`. Returns the unit normal (z > 0)
/// and `c`, or `None` for fewer than three points or a degenerate spread.
pub fn fit_plane(points: &[Vector3<f64>]) -> Option<(Vector3<f64>, f64)> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector3<f64>>() / n;
    let (mut sxx, mut sxy, mut syy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in points {
        let d = p - mean;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
        sxz += d.x * d.z;
        syz += d.y * d.z;
    }
    let det = sxx * syy - sxy * sxy;
    let scale = (sxx + syy).max(f64::MIN_POSITIVE);
    if det.abs() <= 1e-9 * scale * scale {
        return None;
    }
    let a = (sxz * syy - syz * sxy) / det;
    let b = (syz * sxx - sxz * sxy) / det;
    let c = mean.z - a * mean.x - b * mean.y;
    Some((Vector3::new(-a, -b, 1.0).normalize(), c))
}

/// Walk pose for a ground plane: the default pose tilted parallel to the plane.
pub fn walk_pose(normal: &Vector3<f64>, offset: f64, clearance: f64) -> Transform {
    let r = Rotation3::rotation_between(&Vector3::z(), normal).unwrap_or_else(Rotation3::identity);
    Transform::from_parts(r.matrix(), &Vector3::new(0.0, 0.0, offset + clearance))
}

/// Cyclic offsets `amplitude · cos(2π(φ − phase))` for gait phase φ.
pub fn auto_pose(params: &AutoPoseParams, gait_phase: f64) -> Pose6 {
    std::array::from_fn(|i| params.amplitude[i] * (TAU * (gait_phase - params.phase[i])).cos())
}

/// `P_body = H_ali · H_AI · H_inc · H_man · P_walk`.
pub fn compose_body_pose(h_ali: &Transform, h_ai: &Transform, h_inc: &Transform, h_man: &Transform, p_walk: &Transform) -> Transform {
    *h_ali * *h_ai * *h_inc * *h_man * *p_walk
}

/// Tip position in the current body frame for a tip given in the default
/// body frame.
pub fn combine_tip_pose(p_body: &Transform, p_default: &Transform, tip: &Vector3<f64>) -> Vector3<f64> {
    (p_body.inverse() * *p_default).transform_point(tip)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseMode {
    #[default]
    Off,
    Imu,
    Auto,
}

/// Everything the pose generators consume in one tick.
#[derive(Clone, Debug, Default)]
pub struct PoseInputs {
    pub pose_velocity: Pose6,
    /// Body roll/pitch relative to gravity.
    pub imu: Option<[f64; 2]>,
    /// Contact points in the ground frame of the default pose.
    pub contacts: Vec<Vector3<f64>>,
    /// Gait phase fraction in [0, 1).
    pub gait_phase: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodyPoseState {
    pub h_man: Transform,
    pub h_inc: Transform,
    pub h_ali: Transform,
    pub h_ai: Transform,
    pub p_walk: Transform,
    pub p_body: Transform,
    pub p_default: Transform,
    /// The composed pose exceeded the body limits and was clamped.
    pub limited: bool,
}

#[derive(Clone, Debug)]
pub struct PoseController {
    params: PoseParams,
    manual_limits: PoseLimits,
    clearance: f64,
    manual: Pose6,
    pid: Pid,
    imu_correction: [f64; 2],
    mode: PoseMode,
    /// Blend weights of the IMU and automatic contributors.
    weights: [f64; 2],
    plane: (Vector3<f64>, f64),
    state: BodyPoseState,
}

impl PoseController {
    pub fn new(robot: &RobotSpec) -> Self {
        let p_default = Transform::trans_z(robot.body_clearance);
        let id = Transform::identity();
        Self {
            params: robot.pose.clone(),
            manual_limits: robot.max_manual_pose,
            clearance: robot.body_clearance,
            manual: [0.0; 6],
            pid: Pid::new(robot.imu_pid_gains, robot.pose.imu_limit),
            imu_correction: [0.0; 2],
            mode: PoseMode::Off,
            weights: [0.0; 2],
            plane: (Vector3::z(), 0.0),
            state: BodyPoseState {
                h_man: id,
                h_inc: id,
                h_ali: id,
                h_ai: id,
                p_walk: p_default,
                p_body: p_default,
                p_default,
                limited: false,
            },
        }
    }

    pub fn state(&self) -> &BodyPoseState {
        &self.state
    }

    pub fn mode(&self) -> PoseMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: PoseMode) {
        self.mode = mode;
    }

    pub fn manual(&self) -> Pose6 {
        self.manual
    }

    pub fn reset_manual(&mut self) {
        self.manual = [0.0; 6];
    }

    pub fn set_inclination(&mut self, on: bool) {
        self.params.inclination = on;
    }

    /// Current body pose relative to the default pose.
    pub fn relative(&self) -> Transform {
        self.state.p_default.inverse() * self.state.p_body
    }

    pub fn update(&mut self, inputs: &PoseInputs, dt: f64) -> &BodyPoseState {
        let h = self.clearance;
        manual_pose_update(&mut self.manual, &inputs.pose_velocity, dt, &self.manual_limits);

        // blend between the mutually exclusive IMU and automatic contributors
        let rate = dt / self.params.mode_blend_time;
        let target = match self.mode {
            PoseMode::Off => [0.0, 0.0],
            PoseMode::Imu => [1.0, 0.0],
            PoseMode::Auto => [0.0, 1.0],
        };
        for (w, t) in self.weights.iter_mut().zip(target) {
            *w = if (*w - t).abs() <= rate { t } else { *w + rate * (t - *w).signum() };
        }
        match (self.mode, inputs.imu) {
            (PoseMode::Imu, Some(tilt)) => {
                self.imu_correction = self.pid.update([-tilt[0], -tilt[1]], dt);
            }
            (PoseMode::Imu, None) => {}
            _ if self.weights[0] == 0.0 => {
                self.pid.reset();
                self.imu_correction = [0.0; 2];
            }
            _ => {}
        }
        let auto = auto_pose(&self.params.auto_pose, inputs.gait_phase);
        let mut ai: Pose6 = std::array::from_fn(|i| self.weights[1] * auto[i]);
        ai[3] += self.weights[0] * self.imu_correction[0];
        ai[4] += self.weights[0] * self.imu_correction[1];

        // walk plane, low-pass filtered
        if let Some((n, c)) = fit_plane(&inputs.contacts) {
            let a = dt / (self.params.walk_plane_time_constant + dt);
            let (n0, c0) = self.plane;
            self.plane = ((n0 + (n - n0) * a).normalize(), c0 + (c - c0) * a);
        }
        let p_walk = walk_pose(&self.plane.0, self.plane.1, h);

        let h_inc = match (self.params.inclination, inputs.imu) {
            (true, Some(imu)) => {
                let rel = self.state.p_walk.inverse() * self.state.p_body;
                pose_about(h, &inclination_shift(ground_incline(imu, &rel.rotation()), h))
            }
            _ => Transform::identity(),
        };
        let h_man = pose_about(h, &self.manual);
        let h_ai = pose_about(h, &ai);
        let h_ali = Transform::identity();
        let mut p_body = compose_body_pose(&h_ali, &h_ai, &h_inc, &h_man, &p_walk);

        let rel = p_walk.inverse() * p_body;
        let t = rel.translation();
        let r = rel.rpy();
        let mut v = [t.x, t.y, t.z, r.x, r.y, r.z];
        let limited = clamp6(&mut v, &self.params.body_limits.as_array());
        if limited {
            let rel = Transform::from_xyz_rpy(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]));
            p_body = p_walk * rel;
        }
        self.state = BodyPoseState {
            h_man,
            h_inc,
            h_ali,
            h_ai,
            p_walk,
            p_body,
            p_default: self.state.p_default,
            limited,
        };
        &self.state
    }

    /// Tip in the current body frame for a default-frame tip.
    pub fn tip_in_body(&self, tip: &Vector3<f64>) -> Vector3<f64> {
        combine_tip_pose(&self.state.p_body, &self.state.p_default, tip)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;

    fn limits() -> PoseLimits {
        PoseLimits {
            translation: [0.05; 3],
            rotation: [0.2; 3],
        }
    }

    #[test]
    fn manual_pose_saturates_and_reverses() {
        let mut m = [0.0; 6];
        manual_pose_update(&mut m, &[0.0; 6], 0.01, &limits());
        assert_eq!(m, [0.0; 6]);
        let v = [0.0, 0.0, 0.1, 0.0, 0.0, 0.0];
        for _ in 0..1000 {
            manual_pose_update(&mut m, &v, 0.01, &limits());
        }
        assert_eq!(m[2], 0.05);
        let mut m = [0.0; 6];
        let v = [0.01, -0.02, 0.03, 0.1, -0.05, 0.07];
        let back = v.map(|x| -x);
        for _ in 0..100 {
            manual_pose_update(&mut m, &v, 0.005, &limits());
        }
        for _ in 0..100 {
            manual_pose_update(&mut m, &back, 0.005, &limits());
        }
        assert!(m.iter().all(|x| x.abs() < 1e-12), "{m:?}");
    }

    #[test]
    fn pid_cancels_constant_roll() {
        let mut pid = Pid::new(PidGains { kp: 0.5, ki: 2.0, kd: 0.0 }, 0.3);
        let d = 5f64.to_radians();
        let mut c = [0.0; 2];
        for _ in 0..2000 {
            let tilt = [d + c[0], c[1]];
            c = pid.update([-tilt[0], -tilt[1]], 0.005);
        }
        assert!((c[0] + d).abs() < 0.1f64.to_radians(), "{}", c[0].to_degrees());
        assert_eq!(c[1], 0.0);
    }

    #[test]
    fn pid_saturates_at_limit() {
        let mut pid = Pid::new(PidGains { kp: 0.5, ki: 2.0, kd: 0.0 }, 0.1);
        let mut c = [0.0; 2];
        for _ in 0..2000 {
            c = pid.update([-(0.5 + c[0]), 0.0], 0.005);
        }
        assert_eq!(c[0], -0.1);
        // no windup: the integral alone stays near the limit
        assert!((pid.gains.ki * pid.integral[0]).abs() < 0.1 + pid.gains.kp * 0.5);
    }

    #[test]
    fn inclination_shift_values() {
        assert_eq!(inclination_shift([0.0, 0.0], 0.3), [0.0; 6]);
        let s = inclination_shift([0.0, 10f64.to_radians()], 0.3);
        assert!((s[0].abs() - 0.0529).abs() < 1e-4);
        // nose-down pitch faces downhill, so uphill is −x
        assert!(s[0] < 0.0);
        assert!(inclination_shift([0.1, 0.0], 0.3)[1] > 0.0);
    }

    #[test]
    fn ground_incline_removes_body_posing() {
        let body_rel = Rotation3::from_euler_angles(-0.05, 0.0, 0.0);
        let g = ground_incline([0.1, -0.2], &Matrix3::identity());
        assert!((g[0] - 0.1).abs() < 1e-12 && (g[1] + 0.2).abs() < 1e-12);
        // body posed level on a 0.05 rad roll slope reads level at the IMU
        let g = ground_incline([0.0, 0.0], body_rel.matrix());
        assert!((g[0] - 0.05).abs() < 1e-12 && g[1].abs() < 1e-12);
    }

    #[test]
    fn plane_fits() {
        let flat: Vec<_> = [[0.1, 0.2], [-0.2, 0.1], [0.3, -0.3], [0.0, -0.1]]
            .iter()
            .map(|p| Vector3::new(p[0], p[1], 0.0))
            .collect();
        let (n, c) = fit_plane(&flat).unwrap();
        assert_eq!(n, Vector3::z());
        assert_eq!(c, 0.0);
        let tilted: Vec<_> = flat.iter().map(|p| Vector3::new(p.x, p.y, 0.1 * p.x + 0.02)).collect();
        let (n, c) = fit_plane(&tilted).unwrap();
        assert!((n - Vector3::new(-0.1, 0.0, 1.0).normalize()).norm() < 1e-12);
        assert!((c - 0.02).abs() < 1e-12);
        let line: Vec<_> = (0..4).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(fit_plane(&line).is_none());
        assert!(fit_plane(&flat[..2]).is_none());
    }

    #[test]
    fn composition_matches_matrix_product() {
        let a = Transform::from_xyz_rpy(Vector3::new(0.01, 0.0, 0.0), Vector3::new(0.1, 0.0, 0.0));
        let b = Transform::from_xyz_rpy(Vector3::new(0.0, 0.02, 0.0), Vector3::new(0.0, 0.1, 0.0));
        let c = Transform::from_xyz_rpy(Vector3::new(0.0, 0.0, 0.03), Vector3::new(0.0, 0.0, 0.1));
        let d = Transform::from_xyz_rpy(Vector3::new(0.01, 0.01, 0.0), Vector3::new(0.05, 0.0, 0.1));
        let w = Transform::trans_z(0.12);
        let m: Matrix4<f64> = a.matrix() * b.matrix() * c.matrix() * d.matrix() * w.matrix();
        assert!((compose_body_pose(&a, &b, &c, &d, &w).matrix() - m).abs().max() < 1e-15);
        let id = Transform::identity();
        assert_eq!(compose_body_pose(&id, &id, &id, &id, &w), w);
    }

    #[test]
    fn tip_pose_inverse_transform() {
        let pd = Transform::trans_z(0.12);
        let tip = Vector3::new(0.2, -0.1, -0.12);
        assert_eq!(combine_tip_pose(&pd, &pd, &tip), tip);
        let raised = Transform::trans_z(0.13);
        assert!((combine_tip_pose(&raised, &pd, &tip) - (tip - Vector3::new(0.0, 0.0, 0.01))).norm() < 1e-15);
        let yaw = 5f64.to_radians();
        let yawed = Transform::rot_z(yaw) * pd;
        let got = combine_tip_pose(&yawed, &pd, &tip);
        let want = Rotation3::from_euler_angles(0.0, 0.0, -yaw) * tip;
        assert!((got - want).norm() < 1e-15);
        // re-applying the relative body pose undoes it
        let rel = yawed.inverse() * pd;
        assert!((rel.inverse().transform_point(&got) - tip).norm() < 1e-12);
    }

    #[test]
    fn auto_pose_is_periodic_with_peaks() {
        let p = AutoPoseParams {
            amplitude: [0.0, 0.0, 0.0, 2f64.to_radians(), 0.0, 0.0],
            phase: [0.0, 0.0, 0.0, 0.25, 0.0, 0.0],
        };
        assert_eq!(auto_pose(&AutoPoseParams::default(), 0.3), [0.0; 6]);
        let samples: Vec<f64> = (0..200).map(|k| auto_pose(&p, k as f64 / 200.0)[3]).collect();
        let (imax, max) = samples.iter().enumerate().fold((0, f64::MIN), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
        assert_eq!(imax, 50);
        assert!((max - 2f64.to_radians()).abs() < 1e-15);
        let min = samples.iter().cloned().fold(f64::MAX, f64::min);
        assert!((min + 2f64.to_radians()).abs() < 1e-15);
        assert!((auto_pose(&p, 0.1)[3] - auto_pose(&p, 1.1)[3]).abs() < 1e-12);
    }
}
