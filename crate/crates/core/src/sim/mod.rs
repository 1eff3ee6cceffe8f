//! Quasi-static kinematic world: position-servo joints, ground-pinned
//! support feet, a static-torque power model and cost of transport.

use crate::kinematics::{jacobian, tip_in_body, Transform};
use crate::model::{PowerParams, RobotSpec};
use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("distance travelled must be > 0 (got {0} m)")]
    ZeroDistance(f64),
    #[error("no energy records")]
    Empty,
    #[error("expected {expected} joint rows, got {got}")]
    Shape { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Ground pitch about the world y-axis, rad.
    pub incline: f64,
    /// False runs the robot suspended: the body never moves.
    pub grounded: bool,
    /// Standard deviation of the IMU noise, rad.
    pub imu_noise: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            incline: 0.0,
            grounded: true,
            imu_noise: 0.0,
            seed: 0,
        }
    }
}

/// One sample of the power draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    /// s.
    pub time: f64,
    /// V.
    pub voltage: f64,
    /// A.
    pub current: f64,
    /// W.
    pub power: f64,
    /// Body speed over ground, m/s.
    pub velocity: f64,
    /// Cumulative path length, m.
    pub distance: f64,
}

/// Mean power over weight times mean speed.
pub fn cost_of_transport(records: &[EnergyRecord], mass: f64) -> Result<f64, SimError> {
    let (first, last) = match (records.first(), records.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(SimError::Empty),
    };
    let dx = last.distance - first.distance;
    let dt = last.time - first.time;
    if !(dx > 0.0) || !(dt > 0.0) {
        return Err(SimError::ZeroDistance(dx));
    }
    let mean_p = records.iter().map(|r| r.voltage * r.current).sum::<f64>() / records.len() as f64;
    Ok(mean_p / (mass * GRAVITY * dx / dt))
}

/// Idle draw plus holding and mechanical terms per joint.
pub fn power_model(p: &PowerParams, torques: &[Vec<f64>], velocities: &[Vec<f64>]) -> f64 {
    let mut w = p.idle;
    for (tl, vl) in torques.iter().zip(velocities) {
        for (t, v) in tl.iter().zip(vl) {
            w += p.holding * t.abs() + p.motion * (t * v).abs();
        }
    }
    w
}

/// Joint load torques `τ = Jᵀ·F` for external tip forces given in the world frame.
pub fn tip_force_torques(robot: &RobotSpec, q: &[Vec<f64>], body_rotation: &Matrix3<f64>, forces: &[Vector3<f64>]) -> Vec<Vec<f64>> {
    robot
        .legs
        .iter()
        .zip(q)
        .zip(forces)
        .map(|((leg, qi), f)| {
            if *f == Vector3::zeros() {
                return vec![0.0; leg.joint_count()];
            }
            let base = leg.base_transform().rotation();
            let f_leg = base.transpose() * (body_rotation.transpose() * f);
            let j = jacobian(leg, qi);
            (j.transpose() * nalgebra::DVector::from_column_slice(f_leg.as_slice())).iter().copied().collect()
        })
        .collect()
}

/// Support forces: the body weight split equally over the support legs,
/// pushing up on each tip.
pub fn support_forces(support: &[bool], mass: f64) -> Vec<Vector3<f64>> {
    let n = support.iter().filter(|s| **s).count();
    let share = if n == 0 { 0.0 } else { mass * GRAVITY / n as f64 };
    support.iter().map(|&s| if s { Vector3::new(0.0, 0.0, share) } else { Vector3::zeros() }).collect()
}

/// Static joint torques with the weight shared by the support legs.
pub fn static_torques(robot: &RobotSpec, q: &[Vec<f64>], body_rotation: &Matrix3<f64>, support: &[bool]) -> Vec<Vec<f64>> {
    tip_force_torques(robot, q, body_rotation, &support_forces(support, robot.mass))
}

/// Least-squares rigid transform mapping `a` (body) onto `b` (world).
pub fn rigid_fit(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Transform {
    let n = a.len() as f64;
    let ca = a.iter().sum::<Vector3<f64>>() / n;
    let cb = b.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (p, q) in a.iter().zip(b) {
        h += (p - ca) * (q - cb).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    Transform::from_parts(&r, &(cb - r * ca))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub torques: Vec<Vec<f64>>,
    /// W.
    pub power: f64,
    pub support: usize,
    /// No foot carried the body; its pose was held.
    pub held: bool,
    /// Largest distance of a pinned foot from its pin after the fit, m.
    pub residual: f64,
    /// Noisy roll/pitch reading, rad.
    pub imu: [f64; 2],
    pub record: EnergyRecord,
}

#[derive(Clone, Debug)]
pub struct Simulator {
    robot: RobotSpec,
    config: SimConfig,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    normal: Vector3<f64>,
    body: Transform,
    q: Vec<Vec<f64>>,
    pins: Vec<Option<Vector3<f64>>>,
    tips_world: Vec<[Vector3<f64>; 2]>,
    time: f64,
    distance: f64,
    start: Vector3<f64>,
    held_ticks: u64,
}

impl Simulator {
    /// Places the body on the ground with the lowest foot touching it.
    pub fn new(robot: &RobotSpec, config: SimConfig, q: &[Vec<f64>]) -> Self {
        let incline = Transform::rot_y(config.incline);
        let tips: Vec<_> = robot.legs.iter().zip(q).map(|(l, qi)| tip_in_body(l, qi)).collect();
        let h = -tips.iter().map(|t| t.z).fold(f64::INFINITY, f64::min);
        let body = incline * Transform::trans_z(h.max(0.0));
        let tips_world: Vec<_> = tips.iter().map(|t| [body.transform_point(t); 2]).collect();
        Self {
            robot: robot.clone(),
            config,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            noise: Normal::new(0.0, config.imu_noise.max(0.0)).expect("finite noise"),
            normal: incline.transform_vector(&Vector3::z()),
            body,
            q: q.to_vec(),
            pins: vec![None; robot.leg_count()],
            tips_world,
            time: 0.0,
            distance: 0.0,
            start: body.translation(),
            held_ticks: 0,
        }
    }

    pub fn body(&self) -> &Transform {
        &self.body
    }

    pub fn joint_positions(&self) -> &[Vec<f64>] {
        &self.q
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Cumulative path length of the body over ground, m.
    pub fn distance(&self) -> f64 {
        self.distance
    }

    /// Net body displacement since the start, world frame.
    pub fn displacement(&self) -> Vector3<f64> {
        self.body.translation() - self.start
    }

    pub fn held_ticks(&self) -> u64 {
        self.held_ticks
    }

    pub fn pins(&self) -> &[Option<Vector3<f64>>] {
        &self.pins
    }

    pub fn tips_world(&self) -> Vec<Vector3<f64>> {
        self.tips_world.iter().map(|t| t[0]).collect()
    }

    /// Exact roll/pitch of the body relative to gravity.
    pub fn tilt(&self) -> [f64; 2] {
        let r = self.body.rpy();
        [r.x, r.y]
    }

    pub fn read_imu(&mut self) -> [f64; 2] {
        let [r, p] = self.tilt();
        if self.config.imu_noise > 0.0 {
            [r + self.noise.sample(&mut self.rng), p + self.noise.sample(&mut self.rng)]
        } else {
            [r, p]
        }
    }

    /// Signed height of a world point above the ground plane.
    pub fn height_above_ground(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p)
    }

    /// Applies joint positions. `support` marks feet that carry the body;
    /// `None` settles the body onto its lowest feet instead (used while
    /// sequences run).
    pub fn step(&mut self, q: &[Vec<f64>], support: Option<&[bool]>, dt: f64) -> Result<StepReport, SimError> {
        let n = self.robot.leg_count();
        if q.len() != n {
            return Err(SimError::Shape { expected: n, got: q.len() });
        }
        let qd: Vec<Vec<f64>> = q.iter().zip(&self.q).map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) / dt).collect()).collect();
        self.q = q.to_vec();
        let tips: Vec<_> = self.robot.legs.iter().zip(q).map(|(l, qi)| tip_in_body(l, qi)).collect();
        let before = self.body.translation();
        let mut held = false;
        let mut residual: f64 = 0.0;
        let support: Vec<bool> = if !self.config.grounded {
            self.pins.iter_mut().for_each(|p| *p = None);
            vec![false; n]
        } else if let Some(s) = support {
            let s = s.to_vec();
            for i in 0..n {
                if !s[i] {
                    self.pins[i] = None;
                } else if self.pins[i].is_none() {
                    // the foot lands where it was last tick, on the ground
                    let p = self.tips_world[i][0];
                    self.pins[i] = Some(p - self.normal * self.normal.dot(&p));
                }
            }
            let pinned: Vec<usize> = (0..n).filter(|&i| s[i]).collect();
            match pinned.len() {
                0 => {
                    held = true;
                    self.held_ticks += 1;
                }
                1 | 2 => {
                    let r = self.body.rotation();
                    let t = pinned.iter().map(|&i| self.pins[i].unwrap() - r * tips[i]).sum::<Vector3<f64>>() / pinned.len() as f64;
                    self.body = Transform::from_parts(&r, &t);
                }
                _ => {
                    let a: Vec<_> = pinned.iter().map(|&i| tips[i]).collect();
                    let b: Vec<_> = pinned.iter().map(|&i| self.pins[i].unwrap()).collect();
                    self.body = rigid_fit(&a, &b);
                }
            }
            for &i in &pinned {
                residual = residual.max((self.body.transform_point(&tips[i]) - self.pins[i].unwrap()).norm());
            }
            s
        } else {
            self.settle(&tips)
        };

        // lumped leg masses: gravity plus the force that accelerates them
        let mut forces = support_forces(&support, self.robot.mass);
        let m_leg = self.robot.power.leg_mass;
        for i in 0..n {
            let now = self.body.transform_point(&tips[i]);
            let [p1, p2] = self.tips_world[i];
            let acc = (now - 2.0 * p1 + p2) / (dt * dt);
            self.tips_world[i] = [now, p1];
            if m_leg > 0.0 && !support[i] {
                forces[i] -= m_leg * (Vector3::new(0.0, 0.0, GRAVITY) + acc);
            }
        }
        let torques = tip_force_torques(&self.robot, q, &self.body.rotation(), &forces);
        let power = power_model(&self.robot.power, &torques, &qd);

        let moved = self.body.translation() - before;
        let step_len = (moved - self.normal * self.normal.dot(&moved)).norm();
        self.distance += step_len;
        self.time += dt;
        let imu = self.read_imu();
        let voltage = self.robot.power.supply_voltage;
        Ok(StepReport {
            torques,
            power,
            support: support.iter().filter(|s| **s).count(),
            held,
            residual,
            imu,
            record: EnergyRecord {
                time: self.time,
                voltage,
                current: power / voltage,
                power,
                velocity: step_len / dt,
                distance: self.distance,
            },
        })
    }

    fn settle(&mut self, tips: &[Vector3<f64>]) -> Vec<bool> {
        // keep orientation; drop or lift along the ground normal until the
        // lowest foot touches, but never sink the body below the ground
        let r = self.body.rotation();
        let t = self.body.translation();
        let lowest = tips.iter().map(|p| self.normal.dot(&(r * p + t))).fold(f64::INFINITY, f64::min);
        let body_h = self.normal.dot(&t);
        let shift = (-lowest).max(-body_h);
        self.body = Transform::from_parts(&r, &(t + self.normal * shift));
        let support: Vec<bool> = tips.iter().map(|p| self.normal.dot(&self.body.transform_point(p)).abs() < 1e-3).collect();
        for (i, s) in support.iter().enumerate() {
            self.pins[i] = s.then(|| self.body.transform_point(&tips[i]));
        }
        support
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_robot_spec;
    use crate::workspace::default_stance;
    use crate::kinematics::IkOptions;

    fn hexapod() -> RobotSpec {
        load_robot_spec(include_str!("../../../../configs/hexapod.toml")).unwrap()
    }

    fn stance(robot: &RobotSpec) -> Vec<Vec<f64>> {
        let o = IkOptions::from_spec(robot);
        robot.legs.iter().map(|l| default_stance(l, &o).unwrap()).collect()
    }

    fn record(p: f64, t: f64, x: f64) -> EnergyRecord {
        EnergyRecord { time: t, voltage: 25.0, current: p / 25.0, power: p, velocity: 0.0, distance: x }
    }

    #[test]
    fn cot_spot_value_and_scaling() {
        let recs: Vec<_> = (0..=100).map(|k| record(50.0, k as f64 * 0.1, 0.25 * k as f64 * 0.1)).collect();
        let c = cost_of_transport(&recs, 10.0).unwrap();
        assert!((c - 50.0 / (10.0 * 9.81 * 0.25)).abs() < 1e-12);
        assert!((c - 2.039).abs() < 1e-3);
        let fast: Vec<_> = (0..=100).map(|k| record(50.0, k as f64 * 0.1, 0.5 * k as f64 * 0.1)).collect();
        assert!((cost_of_transport(&fast, 10.0).unwrap() - c / 2.0).abs() < 1e-12);
        let scaled: Vec<_> = recs.iter().map(|r| EnergyRecord { current: r.current * 3.0, ..*r }).collect();
        assert!((cost_of_transport(&scaled, 10.0).unwrap() - 3.0 * c).abs() < 1e-12);
        let still: Vec<_> = (0..10).map(|k| record(50.0, k as f64, 0.0)).collect();
        assert!(matches!(cost_of_transport(&still, 10.0), Err(SimError::ZeroDistance(_))));
    }

    #[test]
    fn power_model_terms() {
        let p = PowerParams::default();
        assert_eq!(power_model(&p, &[vec![0.0; 3]], &[vec![1.0; 3]]), p.idle);
        let t = vec![vec![0.5, -1.0, 0.2]];
        let w = vec![vec![0.0; 3]];
        let one = power_model(&p, &t, &w) - p.idle;
        let two = power_model(&p, &[t[0].iter().map(|x| 2.0 * x).collect()], &w) - p.idle;
        assert!((two - 2.0 * one).abs() < 1e-12);
    }

    #[test]
    fn force_balance() {
        let s = [true, false, true, false, true, true];
        let f = support_forces(&s, 3.0);
        let total: f64 = f.iter().map(|v| v.z).sum();
        assert!((total - 3.0 * GRAVITY).abs() < 1e-12);
        assert_eq!(f[1], Vector3::zeros());
    }

    #[test]
    fn rigid_fit_recovers_transform() {
        let t = Transform::from_xyz_rpy(Vector3::new(0.3, -0.2, 0.1), Vector3::new(0.1, -0.2, 0.7));
        let a: Vec<_> = [[0.2, 0.1, -0.1], [-0.2, 0.15, -0.12], [0.0, -0.3, -0.1], [0.1, 0.0, 0.05]].iter().map(|p| Vector3::from(*p)).collect();
        let b: Vec<_> = a.iter().map(|p| t.transform_point(p)).collect();
        assert!(rigid_fit(&a, &b).max_abs_diff(&t) < 1e-12);
    }

    #[test]
    fn standing_still_keeps_body_pose() {
        let r = hexapod();
        let q = stance(&r);
        let mut sim = Simulator::new(&r, SimConfig::default(), &q);
        let b0 = *sim.body();
        assert!((b0.translation().z - r.body_clearance).abs() < 1e-9);
        for _ in 0..100 {
            let rep = sim.step(&q, Some(&[true; 6]), 0.005).unwrap();
            assert!(rep.residual < 1e-9);
            assert!((rep.power - r.power.idle) > 0.0);
        }
        assert!(sim.body().max_abs_diff(&b0) < 1e-12);
        assert_eq!(sim.distance(), 0.0);
    }

    #[test]
    fn air_draws_less_than_ground() {
        let r = hexapod();
        let q = stance(&r);
        let mut ground = Simulator::new(&r, SimConfig::default(), &q);
        let mut air = Simulator::new(&r, SimConfig { grounded: false, ..SimConfig::default() }, &q);
        let g = ground.step(&q, Some(&[true; 6]), 0.005).unwrap();
        let a = air.step(&q, Some(&[true; 6]), 0.005).unwrap();
        assert!(g.power > a.power);
        assert_eq!(a.support, 0);
    }

    #[test]
    fn imu_reads_incline() {
        let r = hexapod();
        let q = stance(&r);
        let inc = 10f64.to_radians();
        let mut sim = Simulator::new(&r, SimConfig { incline: inc, ..SimConfig::default() }, &q);
        let [roll, pitch] = sim.read_imu();
        assert!(roll.abs() < 1e-12 && (pitch - inc).abs() < 1e-12);
        let mut noisy = Simulator::new(&r, SimConfig { imu_noise: 0.01, seed: 7, ..SimConfig::default() }, &q);
        let mut again = Simulator::new(&r, SimConfig { imu_noise: 0.01, seed: 7, ..SimConfig::default() }, &q);
        assert_eq!(noisy.read_imu(), again.read_imu());
    }
}
