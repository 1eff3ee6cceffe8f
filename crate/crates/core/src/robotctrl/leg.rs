use crate::kinematics::{jacobian, jacobian_full, solve_ik, IkOptions, IkTarget, VelocityReference};
use crate::model::{AdmittanceParams, LegSpec, TouchdownParams};
use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

/// External force and moment on the tip, in the leg frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TipWrench {
    pub force: Vector3<f64>,
    pub moment: Vector3<f64>,
    /// The Jacobian was singular and a damped inverse was used.
    pub damped: bool,
}

/// Solves `τ = Jᵀ·w` for the tip wrench `w`. Legs with up to three joints
/// use the position rows only (force, no moment); longer chains use the
/// full 6-row Jacobian and the minimum-norm solution `J(JᵀJ)⁻¹τ`.
pub fn tip_force_estimate(leg: &LegSpec, q: &[f64], torques: &[f64], lambda: f64) -> TipWrench {
    let n = leg.joint_count();
    let j: DMatrix<f64> = if n <= 3 { jacobian(leg, q) } else { jacobian_full(leg, q) };
    let tau = DVector::from_column_slice(torques);
    let jtj = j.transpose() * &j;
    let eig = jtj.clone().symmetric_eigen().eigenvalues;
    let well_posed = eig.min() > 1e-10 * eig.max().max(f64::MIN_POSITIVE);
    let (w, damped) = if well_posed && j.nrows() >= n {
        // J = QR, so Jᵀw = τ has the minimum-norm solution w = Q·R⁻ᵀ·τ
        let qr = j.clone().qr();
        let y = qr.r().transpose().solve_lower_triangular(&tau).unwrap_or_else(|| DVector::zeros(n));
        (qr.q() * y, false)
    } else {
        let damped = jtj + DMatrix::identity(n, n) * (lambda * lambda);
        let x = damped.lu().solve(&tau).unwrap_or_else(|| DVector::zeros(n));
        (&j * x, true)
    };
    let force = Vector3::new(w[0], w[1], w[2]);
    let moment = if w.len() == 6 { Vector3::new(w[3], w[4], w[5]) } else { Vector3::zeros() };
    TipWrench { force, moment, damped }
}

/// Virtual mass-spring-damper on the tip height, driven by the vertical
/// tip force. Lateral displacement is locked to zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdmittanceState {
    pub delta_z: f64,
    pub delta_z_dot: f64,
}

impl AdmittanceState {
    /// One semi-implicit Euler step of `−F = m·z̈ + b·ż + c·z`.
    pub fn update(&mut self, force_z: f64, p: &AdmittanceParams, dt: f64) -> f64 {
        let acc = (-force_z - p.damping * self.delta_z_dot - p.stiffness * self.delta_z) / p.mass;
        self.delta_z_dot += acc * dt;
        self.delta_z += self.delta_z_dot * dt;
        self.delta_z
    }

    /// Offset (x, y, z) to add to the reference tip: `z_d = z_r − Δz`.
    pub fn offset(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, -self.delta_z)
    }
}

/// Contact flag with hysteresis: on after `ticks` consecutive samples above
/// the threshold, off after `ticks` consecutive samples below half of it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TouchdownDetector {
    pub contact: bool,
    count: u32,
}

impl TouchdownDetector {
    pub fn update(&mut self, force_z: f64, p: &TouchdownParams) -> bool {
        let f = force_z.abs();
        let toggling = if self.contact { f < 0.5 * p.threshold } else { f > p.threshold };
        if toggling {
            self.count += 1;
            if self.count >= p.ticks {
                self.contact = !self.contact;
                self.count = 0;
            }
        } else {
            self.count = 0;
        }
        self.contact
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointCommand {
    pub position: Vec<f64>,
    /// rad/s.
    pub velocity: Vec<f64>,
    /// Some joint needed more than its velocity limit this tick.
    pub velocity_clamped: bool,
    /// Tip error of the IK solution before velocity clamping, m.
    pub ik_error: f64,
}

/// IK toward `target` from `q`, then limits the per-tick change to
/// `velocity_max·dt` and the position to the joint range.
pub fn joint_command(leg: &LegSpec, q: &[f64], target: &IkTarget, opts: &IkOptions, dt: f64) -> JointCommand {
    let reference = VelocityReference { q_prev: q, dt };
    let sol = solve_ik(leg, q, target, opts, Some(reference));
    let mut clamped = false;
    let mut position = Vec::with_capacity(q.len());
    let mut velocity = Vec::with_capacity(q.len());
    for ((j, &q0), &q1) in leg.joints.iter().zip(q).zip(sol.q.iter()) {
        let step = j.spec.velocity_max * dt;
        let mut d = q1 - q0;
        if d.abs() > step {
            d = d.clamp(-step, step);
            clamped = true;
        }
        let p = j.spec.clamp(q0 + d);
        velocity.push((p - q0) / dt);
        position.push(p);
    }
    JointCommand {
        position,
        velocity,
        velocity_clamped: clamped,
        ik_error: sol.error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::forward_kinematics;
    use crate::model::{DhParam, JointSpec, LegJoint, Pose};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn joint(dh: DhParam, vmax: f64) -> LegJoint {
        LegJoint {
            spec: JointSpec {
                name: "j".into(),
                position_min: -3.0,
                position_max: 3.0,
                velocity_max: vmax,
                jla_weight: 1.0,
                home_angle: 0.0,
                packed_angle: 0.0,
            },
            dh,
        }
    }

    fn leg(joints: Vec<LegJoint>) -> LegSpec {
        LegSpec {
            id: 1,
            base_frame: Pose::default(),
            default_tip: [0.0; 3],
            orientation_constraint: false,
            joints,
        }
    }

    /// One link rotating about the horizontal y-axis.
    fn lever(len: f64) -> LegSpec {
        leg(vec![joint(DhParam::revolute(0.0, 0.0, len, std::f64::consts::FRAC_PI_2), 2.0)])
    }

    #[test]
    fn lever_force() {
        // horizontal link along x, joint axis turned horizontal by the base frame
        let mut l = leg(vec![joint(DhParam::revolute(0.0, 0.0, 0.3, 0.0), 2.0)]);
        l.base_frame.rpy = [std::f64::consts::FRAC_PI_2, 0.0, 0.0];
        let w = tip_force_estimate(&l, &[0.0], &[1.5], 0.05);
        let f_body = l.base_transform().transform_vector(&w.force);
        assert!((f_body.z - 1.5 / 0.3).abs() < 1e-12, "{f_body}");
        assert!(!w.damped);
        let w = tip_force_estimate(&lever(0.3), &[0.0], &[0.0], 0.05);
        assert_eq!(w.force, Vector3::zeros());
    }

    #[test]
    fn five_joint_round_trip() {
        let l = leg(vec![
            joint(DhParam::revolute(1.0, 0.0, 0.0, 1.5707963267948966), 5.0),
            joint(DhParam::revolute(1.5707963267948966, 0.06, 0.0, 1.5707963267948966), 5.0),
            joint(DhParam::revolute(1.5707963267948966, 0.0, 0.15, 0.0), 5.0),
            joint(DhParam::revolute(0.0, 0.0, 0.15, 0.0), 5.0),
            joint(DhParam::revolute(0.0, 0.0, 0.10, 0.0), 5.0),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let q: Vec<f64> = (0..5).map(|_| rng.random_range(-1.2..1.2)).collect();
            let tau: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let w = tip_force_estimate(&l, &q, &tau, 0.05);
            assert!(!w.damped);
            let wv = DVector::from_iterator(6, w.force.iter().chain(w.moment.iter()).copied());
            let back = jacobian_full(&l, &q).transpose() * wv;
            assert!((back - DVector::from_vec(tau)).amax() < 1e-9);
        }
    }

    #[test]
    fn singular_is_flagged() {
        let l = leg(vec![
            joint(DhParam::revolute(0.0, 0.0, 0.1, 0.0), 5.0),
            joint(DhParam::revolute(0.0, 0.0, 0.1, 0.0), 5.0),
            joint(DhParam::revolute(0.0, 0.0, 0.1, 0.0), 5.0),
        ]);
        // planar chain: the z row of J is zero
        assert!(tip_force_estimate(&l, &[0.1, 0.2, 0.3], &[1.0, 0.5, 0.2], 0.05).damped);
    }

    fn params() -> AdmittanceParams {
        AdmittanceParams {
            enabled: true,
            mass: 0.1,
            damping: 5.0,
            stiffness: 1000.0,
        }
    }

    #[test]
    fn admittance_rest_and_steady_state() {
        let mut s = AdmittanceState::default();
        for _ in 0..100 {
            s.update(0.0, &params(), 0.001);
        }
        assert_eq!(s, AdmittanceState::default());
        for _ in 0..20_000 {
            s.update(10.0, &params(), 0.001);
        }
        assert!((s.delta_z + 0.01).abs() < 1e-9, "{}", s.delta_z);
        assert_eq!(s.offset().xy(), nalgebra::Vector2::zeros());
    }

    #[test]
    fn touchdown_hysteresis() {
        let p = TouchdownParams { threshold: 5.0, ticks: 3 };
        let mut d = TouchdownDetector::default();
        for _ in 0..50 {
            assert!(!d.update(0.0, &p));
        }
        assert!(!d.update(6.0, &p));
        assert!(!d.update(6.0, &p));
        assert!(d.update(6.0, &p));
        // between the two thresholds: stays on
        for _ in 0..10 {
            assert!(d.update(3.0, &p));
        }
    }

    #[test]
    fn command_at_fk_is_still() {
        let l = lever(0.3);
        let q = [0.4];
        let tip = forward_kinematics(&l, &q).translation();
        let c = joint_command(&l, &q, &IkTarget::Position(tip), &IkOptions::default(), 0.005);
        assert!((c.position[0] - 0.4).abs() < 1e-12);
        assert!(!c.velocity_clamped);
    }

    #[test]
    fn command_saturates_velocity() {
        let l = leg(vec![joint(DhParam::revolute(0.0, 0.0, 1.0, 0.0), 2.0)]);
        let dt = 0.01;
        // 2× the per-tick limit
        let a: f64 = 0.04;
        let target = IkTarget::Position(Vector3::new(a.cos(), a.sin(), 0.0));
        let c = joint_command(&l, &[0.0], &target, &IkOptions::default(), dt);
        assert!(c.velocity_clamped);
        assert!((c.position[0] - 0.02).abs() < 1e-15);
        assert!((c.velocity[0] - 2.0).abs() < 1e-12);
    }
}
