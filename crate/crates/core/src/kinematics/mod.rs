//! Forward kinematics, Jacobians and damped-least-squares IK for a single
//! leg chain. All functions are pure.

mod ik;
mod transform;

pub use ik::{
    damped_inverse, dls_step, jla_position_cost, jla_position_gradient, jla_vector, jla_velocity_gradient,
    solve_ik, solve_ik_step, IkOptions, IkSolution, IkTarget, JlaConfig, VelocityReference,
};
pub use transform::Transform;

use crate::model::{DhParam, LegSpec};
use nalgebra::{DMatrix, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("singular matrix: JJᵀ + λ²I is not invertible")]
    Singular,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
}

/// Rot_z(θ)·Trans_z(d)·Trans_x(a)·Rot_x(α) with θ = `p.theta + q`.
pub fn dh_transform(p: &DhParam, q: f64) -> Transform {
    let (st, ct) = (p.theta + q).sin_cos();
    let (sa, ca) = p.alpha.sin_cos();
    Transform::from_matrix_unchecked(nalgebra::Matrix4::new(
        ct,
        -st * ca,
        st * sa,
        p.a * ct,
        st,
        ct * ca,
        -ct * sa,
        p.a * st,
        0.0,
        sa,
        ca,
        p.d,
        0.0,
        0.0,
        0.0,
        1.0,
    ))
}

/// Cumulative frames along the chain in the leg frame: element `i` is the
/// frame joint `i` rotates in (element 0 is the leg frame itself) and the
/// last element is the tip.
pub fn chain_frames(leg: &LegSpec, q: &[f64]) -> Vec<Transform> {
    assert_eq!(q.len(), leg.joints.len(), "joint vector length must match the leg");
    let mut frames = Vec::with_capacity(q.len() + 1);
    let mut acc = Transform::identity();
    frames.push(acc);
    for (joint, &qi) in leg.joints.iter().zip(q) {
        acc = acc * dh_transform(&joint.dh, qi);
        frames.push(acc);
    }
    frames
}

/// Tip pose in the leg frame.
pub fn forward_kinematics(leg: &LegSpec, q: &[f64]) -> Transform {
    assert_eq!(q.len(), leg.joints.len(), "joint vector length must match the leg");
    leg.joints
        .iter()
        .zip(q)
        .fold(Transform::identity(), |acc, (joint, &qi)| acc * dh_transform(&joint.dh, qi))
}

/// Tip position in the body frame.
pub fn tip_in_body(leg: &LegSpec, q: &[f64]) -> Vector3<f64> {
    leg.base_transform().transform_point(&forward_kinematics(leg, q).translation())
}

/// Linear-velocity Jacobian (3×n): column j is v_j × (s − p_j).
pub fn jacobian(leg: &LegSpec, q: &[f64]) -> DMatrix<f64> {
    let frames = chain_frames(leg, q);
    let tip = frames[frames.len() - 1].translation();
    let n = q.len();
    let mut j = DMatrix::zeros(3, n);
    for (col, frame) in frames.iter().take(n).enumerate() {
        let axis = frame.rotation().column(2).into_owned();
        let lever = tip - frame.translation();
        j.fixed_view_mut::<3, 1>(0, col).copy_from(&axis.cross(&lever));
    }
    j
}

/// Full 6×n Jacobian: linear rows then angular rows (the joint axes).
pub fn jacobian_full(leg: &LegSpec, q: &[f64]) -> DMatrix<f64> {
    let frames = chain_frames(leg, q);
    let tip = frames[frames.len() - 1].translation();
    let n = q.len();
    let mut j = DMatrix::zeros(6, n);
    for (col, frame) in frames.iter().take(n).enumerate() {
        let axis = frame.rotation().column(2).into_owned();
        let lever = tip - frame.translation();
        j.fixed_view_mut::<3, 1>(0, col).copy_from(&axis.cross(&lever));
        j.fixed_view_mut::<3, 1>(3, col).copy_from(&axis);
    }
    j
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{JointSpec, LegJoint, Pose};
    use std::f64::consts::{FRAC_PI_2, PI};

    pub(crate) fn planar_leg(links: &[f64]) -> LegSpec {
        LegSpec {
            id: 1,
            base_frame: Pose::default(),
            default_tip: [links.iter().sum::<f64>() * 0.75, 0.0, 0.0],
            orientation_constraint: false,
            joints: links
                .iter()
                .enumerate()
                .map(|(i, &a)| LegJoint {
                    spec: JointSpec {
                        name: format!("j{i}"),
                        position_min: -PI,
                        position_max: PI,
                        velocity_max: 5.0,
                        jla_weight: 1.0,
                        home_angle: 0.0,
                        packed_angle: 0.0,
                    },
                    dh: DhParam::revolute(0.0, 0.0, a, 0.0),
                })
                .collect(),
        }
    }

    #[test]
    fn dh_identity() {
        let t = dh_transform(&DhParam::revolute(0.0, 0.0, 0.0, 0.0), 0.0);
        assert_eq!(t, Transform::identity());
    }

    #[test]
    fn dh_quarter_turn_with_link() {
        let t = dh_transform(&DhParam::revolute(FRAC_PI_2, 0.0, 1.0, 0.0), 0.0);
        assert!((t.translation() - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        let x = t.transform_vector(&Vector3::x());
        assert!((x - Vector3::y()).norm() < 1e-15);
        // joint angle and theta offset are interchangeable
        let u = dh_transform(&DhParam::revolute(0.0, 0.0, 1.0, 0.0), FRAC_PI_2);
        assert!(t.max_abs_diff(&u) < 1e-15);
    }

    #[test]
    fn dh_alpha_maps_y_to_z() {
        let t = dh_transform(&DhParam::revolute(0.0, 0.0, 0.0, FRAC_PI_2), 0.0);
        assert!((t.transform_vector(&Vector3::y()) - Vector3::z()).norm() < 1e-15);
    }

    #[test]
    fn dh_matches_elementary_product() {
        let p = DhParam::revolute(0.3, 0.2, 0.7, -1.1);
        let q = 0.4;
        let product = Transform::rot_z(p.theta + q) * Transform::trans_z(p.d) * Transform::trans_x(p.a) * Transform::rot_x(p.alpha);
        assert!(dh_transform(&p, q).max_abs_diff(&product) < 1e-15);
    }

    #[test]
    fn planar_fk() {
        let leg = planar_leg(&[1.0, 1.0]);
        let tip = forward_kinematics(&leg, &[0.0, 0.0]).translation();
        assert!((tip - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-15);
        let tip = forward_kinematics(&leg, &[FRAC_PI_2, -FRAC_PI_2]).translation();
        assert!((tip - Vector3::new(1.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn planar_jacobian_columns() {
        let leg = planar_leg(&[0.7]);
        let j = jacobian(&leg, &[0.0]);
        assert!((j.column(0) - Vector3::new(0.0, 0.7, 0.0)).norm() < 1e-15);
        let leg = planar_leg(&[1.0, 1.0]);
        let j = jacobian(&leg, &[0.0, 0.0]);
        assert!((j.column(0) - Vector3::new(0.0, 2.0, 0.0)).norm() < 1e-15);
        assert!((j.column(1) - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn full_jacobian_angular_rows_are_axes() {
        let leg = planar_leg(&[1.0, 1.0]);
        let j = jacobian_full(&leg, &[0.3, 0.2]);
        for c in 0..2 {
            assert!((j.fixed_view::<3, 1>(3, c) - Vector3::z()).norm() < 1e-15);
        }
    }
}
