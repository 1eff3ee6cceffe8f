//! Per-leg reachable workspace by iterative IK probing, the shared planar
//! walkspace derived from it, and body velocity ↔ stride conversions.

use crate::kinematics::{forward_kinematics, solve_ik, IkOptions, IkTarget, Transform};
use crate::model::{LegSpec, RobotSpec};
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkspaceError {
    #[error("invalid search parameter {0}: must be > 0")]
    Parameter(&'static str),
    #[error("leg {leg}: default tip is not reachable (residual {error:.4} m)")]
    UnreachableOrigin { leg: u8, error: f64 },
    #[error("no workspace slice at height offset {0} m")]
    EmptySlice(f64),
    #[error("workspaces disagree on bearing resolution")]
    BearingMismatch,
    #[error("invalid velocity domain: {0}")]
    Domain(String),
}

/// Search grid. Heights are offsets from each leg's default tip z.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchParams {
    pub h_min: f64,
    pub h_max: f64,
    pub delta_h: f64,
    /// Bearing step, rad. Rounded so an integer number of steps covers a full turn.
    pub delta_alpha: f64,
    /// Radial probe increment, m.
    pub delta_d: f64,
    /// Tip error tolerance of a probe, m.
    pub delta_p: f64,
    pub ik_iterations: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            h_min: -0.04,
            h_max: 0.04,
            delta_h: 0.02,
            delta_alpha: 5f64.to_radians(),
            delta_d: 0.005,
            delta_p: 0.002,
            ik_iterations: 100,
        }
    }
}

impl SearchParams {
    fn validate(&self) -> Result<(), WorkspaceError> {
        for (name, v) in [
            ("delta_h", self.delta_h),
            ("delta_alpha", self.delta_alpha),
            ("delta_d", self.delta_d),
            ("delta_p", self.delta_p),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(WorkspaceError::Parameter(name));
            }
        }
        if self.ik_iterations == 0 {
            return Err(WorkspaceError::Parameter("ik_iterations"));
        }
        if !(self.h_max >= self.h_min) {
            return Err(WorkspaceError::Parameter("h_max - h_min"));
        }
        Ok(())
    }

    pub fn bearing_count(&self) -> usize {
        ((TAU / self.delta_alpha).round() as usize).max(3)
    }

    pub fn heights(&self) -> Vec<f64> {
        let n = ((self.h_max - self.h_min) / self.delta_h + 1e-9).floor() as usize;
        (0..=n).map(|i| self.h_min + i as f64 * self.delta_h).collect()
    }
}

/// Radii at bearings `k · 2π/n`, measured from the origin tip position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialSlice {
    pub height: f64,
    pub radii: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkspacePolyhedron {
    pub leg_id: u8,
    /// Search origin (default tip) in the body frame.
    pub origin: [f64; 3],
    pub slices: Vec<RadialSlice>,
}

impl WorkspacePolyhedron {
    pub fn bearing_count(&self) -> usize {
        self.slices.first().map_or(0, |s| s.radii.len())
    }

    /// Linear interpolation between the two nearest slices; exact heights
    /// return their slice unchanged.
    pub fn slice_at(&self, height: f64) -> Result<Vec<f64>, WorkspaceError> {
        let s = &self.slices;
        let tol = 1e-9;
        if s.is_empty() || height < s[0].height - tol || height > s[s.len() - 1].height + tol {
            return Err(WorkspaceError::EmptySlice(height));
        }
        if let Some(exact) = s.iter().find(|sl| (sl.height - height).abs() <= tol) {
            return Ok(exact.radii.clone());
        }
        let hi = s.iter().position(|sl| sl.height > height).unwrap();
        let (a, b) = (&s[hi - 1], &s[hi]);
        let w = (height - a.height) / (b.height - a.height);
        Ok(a.radii.iter().zip(&b.radii).map(|(x, y)| x + w * (y - x)).collect())
    }
}

fn bearing_dir(alpha: f64) -> Vector3<f64> {
    Vector3::new(alpha.cos(), alpha.sin(), 0.0)
}

/// IK target for a body-frame tip position. Legs that constrain the tip
/// orientation keep the last link along `axis` (leg frame).
pub fn tip_target(base_inv: &Transform, p_body: &Vector3<f64>, axis: Option<&Vector3<f64>>) -> IkTarget {
    let p_leg = base_inv.transform_point(p_body);
    match axis {
        Some(a) => IkTarget::PositionAxis(p_leg, *a),
        None => IkTarget::Position(p_leg),
    }
}

/// Direction of the last link at the default stance, for legs that keep it.
pub fn stance_axis(leg: &LegSpec, q_stance: &[f64]) -> Option<Vector3<f64>> {
    leg.orientation_constraint
        .then(|| forward_kinematics(leg, q_stance).rotation().column(0).into_owned())
}

/// Solves the default stance configuration of a leg: joint angles putting
/// the tip at its default position, starting from the home angles.
pub fn default_stance(leg: &LegSpec, opts: &IkOptions) -> Result<Vec<f64>, WorkspaceError> {
    let base_inv = leg.base_transform().inverse();
    let target = IkTarget::Position(base_inv.transform_point(&leg.default_tip()));
    let o = IkOptions {
        max_iterations: opts.max_iterations.max(500),
        jla: None,
        ..opts.clone()
    };
    let sol = solve_ik(leg, &leg.home_angles(), &target, &o, None);
    if sol.error > 1e-6 {
        return Err(WorkspaceError::UnreachableOrigin { leg: leg.id, error: sol.error });
    }
    Ok(sol.q.as_slice().to_vec())
}

/// Radial search at every (height, bearing) for one leg.
///
/// Each bearing walks the target outward from the origin in `delta_d`
/// increments, warm-starting IK from the previous probe. The radius is the
/// distance of the last target reached within `delta_p`; targets the clamped
/// solver cannot reach within limits show up as tip error.
pub fn generate_workspace(robot: &RobotSpec, leg: &LegSpec, search: &SearchParams) -> Result<WorkspacePolyhedron, WorkspaceError> {
    search.validate()?;
    let base_opts = IkOptions::from_spec(robot);
    let q0 = default_stance(leg, &base_opts)?;
    let axis = stance_axis(leg, &q0);
    let opts = IkOptions {
        tolerance: search.delta_p * 1e-3,
        max_iterations: search.ik_iterations,
        jla: None,
        ..base_opts
    };
    let base_inv = leg.base_transform().inverse();
    let n = search.bearing_count();
    let step = TAU / n as f64;
    let reach_cap = 2.0 * leg.link_length_sum() + search.delta_d;
    let origin = leg.default_tip();

    let mut slices = Vec::new();
    for h in search.heights() {
        let p0 = origin + Vector3::new(0.0, 0.0, h);
        // settle at the slice origin once, then start every bearing from there
        let start = solve_ik(leg, &q0, &tip_target(&base_inv, &p0, axis.as_ref()), &opts, None);
        let mut radii = Vec::with_capacity(n);
        for k in 0..n {
            let u = bearing_dir(k as f64 * step);
            let mut q = start.q.as_slice().to_vec();
            let mut verified: Option<f64> = None;
            let mut d = 0.0;
            while d <= reach_cap {
                let p = p0 + u * d;
                let sol = solve_ik(leg, &q, &tip_target(&base_inv, &p, axis.as_ref()), &opts, None);
                if !leg.within_limits(sol.q.as_slice()) {
                    break;
                }
                let tip_body = leg.base_transform().transform_point(&sol.tip.translation());
                if (tip_body - p).norm() > search.delta_p {
                    break;
                }
                verified = Some(d);
                q = sol.q.as_slice().to_vec();
                d += search.delta_d;
            }
            radii.push(verified.unwrap_or(0.0));
        }
        slices.push(RadialSlice { height: h, radii });
    }
    Ok(WorkspacePolyhedron {
        leg_id: leg.id,
        origin: [origin.x, origin.y, origin.z],
        slices,
    })
}

/// All legs, one thread per leg.
pub fn generate_all(robot: &RobotSpec, search: &SearchParams) -> Result<Vec<WorkspacePolyhedron>, WorkspaceError> {
    std::thread::scope(|s| {
        let handles: Vec<_> = robot
            .legs
            .iter()
            .map(|leg| s.spawn(move || generate_workspace(robot, leg, search)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("workspace worker panicked")).collect()
    })
}

/// The polygon shared by every leg, centred on each leg's default tip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Walkspace {
    pub height: f64,
    pub radii: Vec<f64>,
}

impl Walkspace {
    pub fn bearing_step(&self) -> f64 {
        TAU / self.radii.len() as f64
    }

    pub fn vertices(&self) -> Vec<Vector2<f64>> {
        let step = self.bearing_step();
        self.radii
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let a = k as f64 * step;
                Vector2::new(a.cos(), a.sin()) * *r
            })
            .collect()
    }

    /// Distance from the centre to the polygon boundary along bearing `phi`.
    pub fn radius_at(&self, phi: f64) -> f64 {
        let n = self.radii.len();
        let step = self.bearing_step();
        let a = phi.rem_euclid(TAU);
        let k = ((a / step).floor() as usize).min(n - 1);
        let (k0, k1) = (k, (k + 1) % n);
        let p0 = Vector2::new((k0 as f64 * step).cos(), (k0 as f64 * step).sin()) * self.radii[k0];
        let p1 = Vector2::new((k1 as f64 * step).cos(), (k1 as f64 * step).sin()) * self.radii[k1];
        let u = Vector2::new(a.cos(), a.sin());
        let e = p1 - p0;
        let denom = u.perp(&e);
        if denom.abs() < 1e-15 {
            return self.radii[k0].min(self.radii[k1]);
        }
        // t·u = p0 + s·e
        let t = p0.perp(&e) / denom;
        t.max(0.0)
    }

    pub fn contains(&self, offset: &Vector2<f64>) -> bool {
        let r = offset.norm();
        r == 0.0 || r <= self.radius_at(offset.y.atan2(offset.x)) + 1e-12
    }
}

/// Ring neighbours (clockwise order) of each leg.
fn neighbours(count: usize, i: usize) -> Vec<usize> {
    match count {
        0 | 1 => vec![],
        2 => vec![1 - i],
        _ => vec![(i + count - 1) % count, (i + 1) % count],
    }
}

/// Clips each leg's slice at the perpendicular bisectors with its
/// neighbours' default tips, takes the per-bearing minimum across legs,
/// then mirrors across the body x-axis so left and right legs agree.
pub fn derive_walkspace(workspaces: &[WorkspacePolyhedron], height: f64) -> Result<Walkspace, WorkspaceError> {
    let n = workspaces.first().map(|w| w.bearing_count()).ok_or(WorkspaceError::EmptySlice(height))?;
    if n == 0 || workspaces.iter().any(|w| w.bearing_count() != n) {
        return Err(WorkspaceError::BearingMismatch);
    }
    let step = TAU / n as f64;
    let tips: Vec<Vector2<f64>> = workspaces.iter().map(|w| Vector2::new(w.origin[0], w.origin[1])).collect();
    let mut radii = vec![f64::INFINITY; n];
    for (i, ws) in workspaces.iter().enumerate() {
        let raw = ws.slice_at(height)?;
        for (k, r_raw) in raw.into_iter().enumerate() {
            let a = k as f64 * step;
            let u = Vector2::new(a.cos(), a.sin());
            let mut r = r_raw;
            for j in neighbours(workspaces.len(), i) {
                let delta = tips[j] - tips[i];
                let dist = delta.norm();
                if dist == 0.0 {
                    continue;
                }
                let normal = delta / dist;
                let along = u.dot(&normal);
                if along > 0.0 {
                    r = r.min(0.5 * dist / along);
                }
            }
            radii[k] = radii[k].min(r);
        }
    }
    let sym: Vec<f64> = (0..n).map(|k| radii[k].min(radii[(n - k) % n])).collect();
    Ok(Walkspace { height, radii: sym })
}

/// v = l_s · f_s / β.
pub fn body_velocity(stride_length: f64, step_frequency: f64, duty_factor: f64) -> Result<f64, WorkspaceError> {
    check_domain(step_frequency, duty_factor)?;
    if !(stride_length >= 0.0) {
        return Err(WorkspaceError::Domain(format!("stride length {stride_length} must be >= 0")));
    }
    Ok(stride_length * step_frequency / duty_factor)
}

fn check_domain(step_frequency: f64, duty_factor: f64) -> Result<(), WorkspaceError> {
    if !(duty_factor > 0.0 && duty_factor < 1.0) {
        return Err(WorkspaceError::Domain(format!("duty factor {duty_factor} must be in (0, 1)")));
    }
    if !(step_frequency > 0.0 && step_frequency.is_finite()) {
        return Err(WorkspaceError::Domain(format!("step frequency {step_frequency} must be > 0")));
    }
    Ok(())
}

/// Planar body velocity: linear x, y (m/s) and yaw rate (rad/s).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanarVelocity {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl PlanarVelocity {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw }
    }

    pub fn scaled(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s, self.yaw * s)
    }

    pub fn is_zero(&self) -> bool {
        self.x == 0.0 && self.y == 0.0 && self.yaw == 0.0
    }

    /// Velocity of a body-fixed point at `r` (body frame xy).
    pub fn at_point(&self, r: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(self.x - self.yaw * r.y, self.y + self.yaw * r.x)
    }
}

/// Stride of a stance tip at `r`: (v + ω ẑ × r) · β / f_s.
pub fn stride_for(v: &PlanarVelocity, r: &Vector2<f64>, step_frequency: f64, duty_factor: f64) -> Vector2<f64> {
    v.at_point(r) * (duty_factor / step_frequency)
}

/// Uniformly scales `v` so every leg's stance chord (default tip ± stride/2)
/// stays inside the walkspace. Direction is preserved.
pub fn limit_velocity(
    v: &PlanarVelocity,
    walkspace: &Walkspace,
    step_frequency: f64,
    duty_factor: f64,
    tips: &[Vector2<f64>],
) -> PlanarVelocity {
    let mut scale: f64 = 1.0;
    for r in tips {
        let stride = stride_for(v, r, step_frequency, duty_factor);
        let half = 0.5 * stride.norm();
        if half == 0.0 {
            continue;
        }
        let phi = stride.y.atan2(stride.x);
        let room = walkspace.radius_at(phi).min(walkspace.radius_at(phi + std::f64::consts::PI));
        scale = scale.min(room / half);
    }
    if scale < 1.0 {
        v.scaled(scale.max(0.0))
    } else {
        *v
    }
}

/// Largest scale in [0, 1] on `v` such that a stance tip at `offset` from
/// its default position, carried for `remaining` seconds, still ends inside
/// the walkspace. Tips already outside are left unconstrained.
pub fn remaining_stance_scale(v: &PlanarVelocity, walkspace: &Walkspace, tip: &Vector2<f64>, offset: &Vector2<f64>, remaining: f64) -> f64 {
    let travel = v.at_point(tip) * remaining;
    let end = |s: f64| offset - travel * s;
    if walkspace.contains(&end(1.0)) || !walkspace.contains(offset) {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if walkspace.contains(&end(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

pub fn default_tips_xy(robot: &RobotSpec) -> Vec<Vector2<f64>> {
    robot.legs.iter().map(|l| Vector2::new(l.default_tip[0], l.default_tip[1])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{JointSpec, LegJoint, Pose, DhParam};

    pub(crate) fn planar_robot(knee: (f64, f64)) -> RobotSpec {
        let joint = |name: &str, lo: f64, hi: f64, home: f64| LegJoint {
            spec: JointSpec {
                name: name.into(),
                position_min: lo,
                position_max: hi,
                velocity_max: 5.0,
                jla_weight: 1.0,
                home_angle: home,
                packed_angle: home,
            },
            dh: DhParam::revolute(0.0, 0.0, 1.0, 0.0),
        };
        RobotSpec {
            name: "planar".into(),
            mass: 1.0,
            body_clearance: 0.1,
            step_clearance: 0.05,
            step_frequency: 1.0,
            ik_lambda: 0.05,
            max_manual_pose: Default::default(),
            imu_pid_gains: Default::default(),
            admittance: Default::default(),
            jla: Default::default(),
            ik: Default::default(),
            walk: Default::default(),
            pose: Default::default(),
            touchdown: Default::default(),
            power: Default::default(),
            sequences: vec![],
            legs: vec![LegSpec {
                id: 1,
                base_frame: Pose::default(),
                default_tip: [1.5, 0.0, 0.0],
                orientation_constraint: false,
                joints: vec![joint("hip", -3.0, 3.0, 0.5), joint("knee", knee.0, knee.1, -1.0)],
            }],
        }
    }

    fn flat() -> SearchParams {
        SearchParams {
            h_min: 0.0,
            h_max: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn planar_forward_radius() {
        let robot = planar_robot((-2.5, -0.05));
        let ws = generate_workspace(&robot, &robot.legs[0], &flat()).unwrap();
        let r0 = ws.slices[0].radii[0];
        let analytic = 2.0 * (0.025f64).cos() - 1.5;
        assert!(r0 <= analytic + 0.002 && r0 > analytic - 0.005, "r0 {r0} vs {analytic}");
    }

    #[test]
    fn joint_at_limit_gives_zero_radius() {
        // knee at its limit: moving outward would need it to straighten further
        let mut robot = planar_robot((-2.5, -0.05));
        let leg = &mut robot.legs[0];
        let q = [0.0_f64, -0.05];
        let tip = forward_kinematics(leg, &q).translation();
        leg.default_tip = [tip.x, tip.y, 0.0];
        leg.joints[0].spec.home_angle = 0.0;
        leg.joints[1].spec.home_angle = -0.05;
        let ws = generate_workspace(&robot, &robot.legs[0], &flat()).unwrap();
        let bearing = tip.y.atan2(tip.x);
        let k = (bearing.rem_euclid(TAU) / (TAU / 72.0)).round() as usize % 72;
        assert_eq!(ws.slices[0].radii[k], 0.0);
    }

    #[test]
    fn unreachable_origin_is_error() {
        let mut robot = planar_robot((-2.5, -0.05));
        robot.legs[0].default_tip = [3.0, 0.0, 0.0];
        assert!(matches!(
            generate_workspace(&robot, &robot.legs[0], &flat()),
            Err(WorkspaceError::UnreachableOrigin { leg: 1, .. })
        ));
    }

    #[test]
    fn stride_length_velocity_relation() {
        assert!((body_velocity(0.2, 1.0, 0.5).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(body_velocity(0.0, 1.3, 0.25).unwrap(), 0.0);
        assert!((body_velocity(0.348, 2.0, 0.5).unwrap() - 1.392).abs() < 1e-12);
        assert!(body_velocity(0.1, 1.0, 1.0).is_err());
        assert!(body_velocity(0.1, 0.0, 0.5).is_err());
    }

    fn disc(r: f64) -> Walkspace {
        Walkspace { height: 0.0, radii: vec![r; 72] }
    }

    #[test]
    fn radius_at_vertices_and_between() {
        let w = disc(0.1);
        assert!((w.radius_at(0.0) - 0.1).abs() < 1e-15);
        let half = std::f64::consts::PI / 72.0;
        assert!((w.radius_at(half) - 0.1 * half.cos()).abs() < 1e-12);
    }

    #[test]
    fn limit_within_and_saturated() {
        let w = disc(0.1);
        let tips = [Vector2::new(0.2, 0.1), Vector2::new(-0.2, -0.1)];
        let v = PlanarVelocity::new(0.1, 0.0, 0.0);
        assert_eq!(limit_velocity(&v, &w, 1.0, 0.5, &tips), v);
        let fast = PlanarVelocity::new(4.0, 0.0, 0.0);
        let lim = limit_velocity(&fast, &w, 1.0, 0.5, &tips);
        // half stride 0.1 → stride 0.2 → v = 0.2·1/0.5
        assert!((lim.x - 0.4).abs() < 1e-12);
        assert_eq!(lim.y, 0.0);
        let again = limit_velocity(&lim, &w, 1.0, 0.5, &tips);
        assert!((again.x - lim.x).abs() < 1e-12);
    }

    #[test]
    fn walkspace_min_and_bisector() {
        let slice = |r: f64| RadialSlice { height: 0.0, radii: vec![r; 8] };
        let a = WorkspacePolyhedron { leg_id: 1, origin: [0.0, 0.0, 0.0], slices: vec![slice(1.0)] };
        let mut b = WorkspacePolyhedron { leg_id: 2, origin: [0.0, -10.0, 0.0], slices: vec![slice(1.0)] };
        let w = derive_walkspace(&[a.clone(), b.clone()], 0.0).unwrap();
        assert!(w.radii.iter().all(|&r| r == 1.0));
        b.slices[0].radii[0] = 0.5;
        let w = derive_walkspace(&[a.clone(), b.clone()], 0.0).unwrap();
        assert_eq!(w.radii[0], 0.5);
        // neighbours 1 m apart clip each other at 0.5 m
        b.origin = [1.0, 0.0, 0.0];
        b.slices[0].radii[0] = 1.0;
        let w = derive_walkspace(&[a, b], 0.0).unwrap();
        assert!((w.radii[0] - 0.5).abs() < 1e-12);
        assert!((w.radii[4] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn symmetrized_about_x() {
        let radii: Vec<f64> = (0..8).map(|k| 1.0 + 0.1 * k as f64).collect();
        let a = WorkspacePolyhedron { leg_id: 1, origin: [0.0; 3], slices: vec![RadialSlice { height: 0.0, radii }] };
        let w = derive_walkspace(&[a], 0.0).unwrap();
        for k in 0..8 {
            assert_eq!(w.radii[k], w.radii[(8 - k) % 8]);
        }
    }

    #[test]
    fn slice_interpolation() {
        let p = WorkspacePolyhedron {
            leg_id: 1,
            origin: [0.0; 3],
            slices: vec![
                RadialSlice { height: 0.0, radii: vec![1.0; 4] },
                RadialSlice { height: 0.02, radii: vec![2.0; 4] },
            ],
        };
        assert_eq!(p.slice_at(0.01).unwrap(), vec![1.5; 4]);
        assert!(p.slice_at(0.05).is_err());
    }
}
