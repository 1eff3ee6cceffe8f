use super::{forward_kinematics, jacobian, jacobian_full, KinematicsError, Transform};
use crate::model::{LegSpec, RobotSpec};
use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};

/// Joint-limit avoidance settings: a weighted p-norm cost over normalised
/// distances from the range centre, plus the same form over per-tick joint
/// motion relative to the velocity limit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JlaConfig {
    pub p: u32,
    pub position_weight: f64,
    pub velocity_weight: f64,
    pub max_norm: f64,
}

impl From<crate::model::JlaParams> for JlaConfig {
    fn from(p: crate::model::JlaParams) -> Self {
        Self {
            p: p.p,
            position_weight: p.position_weight,
            velocity_weight: p.velocity_weight,
            max_norm: p.max_norm,
        }
    }
}

/// Joint positions at the start of the current tick, for the velocity term.
#[derive(Clone, Copy, Debug)]
pub struct VelocityReference<'a> {
    pub q_prev: &'a [f64],
    pub dt: f64,
}

fn pnorm_gradient(x: &[f64], scale: &[f64], p: u32) -> DVector<f64> {
    // x_i already weighted; dΦ/dq_i = Φ^(1-p) x_i^(p-1) · scale_i for even p
    let p_f = f64::from(p);
    let sum: f64 = x.iter().map(|v| v.abs().powf(p_f)).sum();
    if sum == 0.0 {
        return DVector::zeros(x.len());
    }
    let phi = sum.powf(1.0 / p_f);
    let lead = phi.powf(1.0 - p_f);
    DVector::from_iterator(
        x.len(),
        x.iter().zip(scale).map(|(&v, &s)| lead * v.abs().powf(p_f - 1.0) * v.signum() * s),
    )
}

/// Φ(q) = (Σ |K_ii (q_i − q_c,i)/Δq_i|^p)^(1/p).
pub fn jla_position_cost(leg: &LegSpec, q: &[f64], p: u32) -> f64 {
    let p_f = f64::from(p);
    leg.joints
        .iter()
        .zip(q)
        .map(|(j, &qi)| (j.spec.jla_weight * (qi - j.spec.centre()) / j.spec.range()).abs().powf(p_f))
        .sum::<f64>()
        .powf(1.0 / p_f)
}

pub fn jla_position_gradient(leg: &LegSpec, q: &[f64], p: u32) -> DVector<f64> {
    let x: Vec<f64> = leg
        .joints
        .iter()
        .zip(q)
        .map(|(j, &qi)| j.spec.jla_weight * (qi - j.spec.centre()) / j.spec.range())
        .collect();
    let scale: Vec<f64> = leg.joints.iter().map(|j| j.spec.jla_weight / j.spec.range()).collect();
    pnorm_gradient(&x, &scale, p)
}

pub fn jla_velocity_gradient(leg: &LegSpec, q: &[f64], reference: VelocityReference<'_>, p: u32) -> DVector<f64> {
    let x: Vec<f64> = leg
        .joints
        .iter()
        .zip(q.iter().zip(reference.q_prev))
        .map(|(j, (&qi, &q0))| j.spec.jla_weight * (qi - q0) / (j.spec.velocity_max * reference.dt))
        .collect();
    let scale: Vec<f64> = leg
        .joints
        .iter()
        .map(|j| j.spec.jla_weight / (j.spec.velocity_max * reference.dt))
        .collect();
    pnorm_gradient(&x, &scale, p)
}

/// v = −(w_pos ∇Φ_pos + w_vel ∇Φ_vel), scaled down to at most `max_norm`.
pub fn jla_vector(leg: &LegSpec, q: &[f64], cfg: &JlaConfig, velocity: Option<VelocityReference<'_>>) -> DVector<f64> {
    let mut v = -jla_position_gradient(leg, q, cfg.p) * cfg.position_weight;
    if let Some(r) = velocity {
        if cfg.velocity_weight > 0.0 {
            v -= jla_velocity_gradient(leg, q, r, cfg.p) * cfg.velocity_weight;
        }
    }
    let norm = v.norm();
    if norm > cfg.max_norm && norm > 0.0 {
        v *= cfg.max_norm / norm;
    }
    v
}

/// Z = Jᵀ(JJᵀ + λ²I)⁻¹. With λ = 0 the Gram matrix must be invertible.
pub fn damped_inverse(j: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>, KinematicsError> {
    let m = j.nrows();
    let gram = j * j.transpose() + DMatrix::identity(m, m) * (lambda * lambda);
    let inv = if lambda > 0.0 {
        match gram.clone().cholesky() {
            Some(c) => c.inverse(),
            None => gram.try_inverse().ok_or(KinematicsError::Singular)?,
        }
    } else {
        let lu = gram.lu();
        if lu.u().diagonal().iter().any(|d| d.abs() < 1e-14) {
            return Err(KinematicsError::Singular);
        }
        lu.try_inverse().ok_or(KinematicsError::Singular)?
    };
    Ok(j.transpose() * inv)
}

/// Δθ = Z·Δs + (I − Z·J)·v.
pub fn dls_step(
    j: &DMatrix<f64>,
    delta_s: &DVector<f64>,
    lambda: f64,
    null_space: Option<&DVector<f64>>,
) -> Result<DVector<f64>, KinematicsError> {
    if delta_s.len() != j.nrows() {
        return Err(KinematicsError::Dimension {
            expected: j.nrows(),
            actual: delta_s.len(),
        });
    }
    let z = damped_inverse(j, lambda)?;
    let mut dq = &z * delta_s;
    if let Some(v) = null_space {
        if v.len() != j.ncols() {
            return Err(KinematicsError::Dimension {
                expected: j.ncols(),
                actual: v.len(),
            });
        }
        let n = j.ncols();
        dq += (DMatrix::identity(n, n) - &z * j) * v;
    }
    Ok(dq)
}

/// One position-only DLS step for a tip displacement in the leg frame.
pub fn solve_ik_step(
    leg: &LegSpec,
    q: &[f64],
    delta_s: &Vector3<f64>,
    lambda: f64,
    jla: Option<(&JlaConfig, Option<VelocityReference<'_>>)>,
) -> Result<DVector<f64>, KinematicsError> {
    let j = jacobian(leg, q);
    let v = jla.map(|(cfg, vel)| jla_vector(leg, q, cfg, vel));
    dls_step(&j, &DVector::from_column_slice(delta_s.as_slice()), lambda, v.as_ref())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IkTarget {
    /// Tip position in the leg frame.
    Position(Vector3<f64>),
    /// Tip pose in the leg frame.
    Pose(Transform),
    /// Tip position plus the direction of the tip frame's x-axis (the last
    /// link), leaving roll about that link free. Five constraints.
    PositionAxis(Vector3<f64>, Vector3<f64>),
}

impl IkTarget {
    pub fn position(&self) -> Vector3<f64> {
        match self {
            IkTarget::Position(p) => *p,
            IkTarget::Pose(t) => t.translation(),
            IkTarget::PositionAxis(p, _) => *p,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IkOptions {
    pub lambda: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_step: f64,
    pub clamp_to_limits: bool,
    pub orientation_weight: f64,
    /// Null-space term, applied on the first iteration of each solve.
    pub jla: Option<JlaConfig>,
}

impl IkOptions {
    pub fn from_spec(spec: &RobotSpec) -> Self {
        Self {
            lambda: spec.ik_lambda,
            tolerance: spec.ik.tolerance,
            max_iterations: spec.ik.max_iterations,
            max_step: spec.ik.max_step,
            clamp_to_limits: true,
            orientation_weight: spec.ik.orientation_weight,
            jla: Some(spec.jla.into()),
        }
    }
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            lambda: 0.05,
            tolerance: 1e-9,
            max_iterations: 100,
            max_step: 0.05,
            clamp_to_limits: true,
            orientation_weight: 0.1,
            jla: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IkSolution {
    pub q: DVector<f64>,
    pub tip: Transform,
    /// Task-space error norm of the returned solution.
    pub error: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn task_error(target: &IkTarget, tip: &Transform, w: f64) -> DVector<f64> {
    match target {
        IkTarget::Position(p) => DVector::from_column_slice((p - tip.translation()).as_slice()),
        IkTarget::Pose(t) => {
            let dp = t.translation() - tip.translation();
            let r = Rotation3::from_matrix_unchecked(t.rotation() * tip.rotation().transpose());
            let dr = r.scaled_axis() * w;
            DVector::from_iterator(6, dp.iter().chain(dr.iter()).copied())
        }
        IkTarget::PositionAxis(p, axis) => {
            let dp = p - tip.translation();
            let x = tip.rotation().column(0).into_owned();
            let dr = x.cross(&axis.normalize()) * w;
            DVector::from_iterator(6, dp.iter().chain(dr.iter()).copied())
        }
    }
}

fn clamp_into_limits(leg: &LegSpec, q: &mut DVector<f64>) {
    for (qi, j) in q.iter_mut().zip(&leg.joints) {
        *qi = j.spec.clamp(*qi);
    }
}

/// Iterated DLS with per-iteration clamping to the position limits.
/// Non-convergence is reported in the result, never as an error.
pub fn solve_ik(
    leg: &LegSpec,
    q_start: &[f64],
    target: &IkTarget,
    opts: &IkOptions,
    velocity: Option<VelocityReference<'_>>,
) -> IkSolution {
    let mut q = DVector::from_column_slice(q_start);
    if opts.clamp_to_limits {
        clamp_into_limits(leg, &mut q);
    }
    let mut tip = forward_kinematics(leg, q.as_slice());
    let mut err = task_error(target, &tip, opts.orientation_weight);
    let mut best = (q.clone(), tip, err.norm());
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        if best.2 <= opts.tolerance {
            break;
        }
        let mut ds = err.clone();
        let n = ds.norm();
        if n > opts.max_step {
            ds *= opts.max_step / n;
        }
        let j = match target {
            IkTarget::Position(_) => jacobian(leg, q.as_slice()),
            IkTarget::Pose(_) => {
                let mut j = jacobian_full(leg, q.as_slice());
                for r in 3..6 {
                    j.row_mut(r).scale_mut(opts.orientation_weight);
                }
                j
            }
            IkTarget::PositionAxis(..) => {
                // rotation about the link itself does not move its axis
                let mut j = jacobian_full(leg, q.as_slice());
                let x = tip.rotation().column(0).into_owned();
                let proj = (Matrix3::identity() - x * x.transpose()) * opts.orientation_weight;
                let ang = proj * j.rows(3, 3);
                j.rows_mut(3, 3).copy_from(&ang);
                j
            }
        };
        let v = match (&opts.jla, iterations) {
            (Some(cfg), 0) => Some(jla_vector(leg, q.as_slice(), cfg, velocity)),
            _ => None,
        };
        let dq = match dls_step(&j, &ds, opts.lambda, v.as_ref()) {
            Ok(dq) => dq,
            Err(_) => break,
        };
        let q_prev = q.clone();
        q += dq;
        if opts.clamp_to_limits {
            clamp_into_limits(leg, &mut q);
        }
        iterations += 1;
        // pinned against limits or at a stationary point: nothing left to gain
        if (&q - &q_prev).amax() < 1e-15 {
            break;
        }
        tip = forward_kinematics(leg, q.as_slice());
        err = task_error(target, &tip, opts.orientation_weight);
        let e = err.norm();
        if e < best.2 {
            best = (q.clone(), tip, e);
        }
    }
    let (q, tip, error) = best;
    IkSolution {
        q,
        tip,
        error,
        iterations,
        converged: error <= opts.tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::tests::planar_leg;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn identity_jacobian_unit_damping() {
        let j = DMatrix::<f64>::identity(2, 2);
        let dq = dls_step(&j, &DVector::from_vec(vec![1.0, 0.0]), 1.0, None).unwrap();
        assert!((dq - DVector::from_vec(vec![0.5, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn undamped_square_is_inverse() {
        let j = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 3.0]);
        let ds = DVector::from_vec(vec![0.3, -0.7]);
        let dq = dls_step(&j, &ds, 0.0, None).unwrap();
        let expected = j.clone().try_inverse().unwrap() * &ds;
        assert!((dq - expected).norm() < 1e-12);
    }

    #[test]
    fn undamped_singular_errors() {
        let j = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let err = dls_step(&j, &DVector::from_vec(vec![1.0, 0.0]), 0.0, None).unwrap_err();
        assert_eq!(err, KinematicsError::Singular);
        // damping makes it solvable
        assert!(dls_step(&j, &DVector::from_vec(vec![1.0, 0.0]), 0.1, None).is_ok());
    }

    #[test]
    fn null_space_projection_exact_for_square() {
        let j = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.1, 1.3, 0.4, -0.2, 0.0, 0.9]);
        let z = damped_inverse(&j, 0.0).unwrap();
        let proj = DMatrix::identity(3, 3) - &z * &j;
        assert!((&j * proj).abs().max() < 1e-9);
    }

    #[test]
    fn gradient_points_to_centre() {
        let leg = planar_leg(&[1.0, 1.0, 1.0]);
        let q = [0.5, -1.2, 0.0];
        let v = -jla_position_gradient(&leg, &q, 2);
        assert!(v[0] < 0.0);
        assert!(v[1] > 0.0);
        assert_eq!(v[2], 0.0);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let leg = planar_leg(&[1.0, 0.5, 0.3]);
        let q = [0.4, -0.9, 1.7];
        for p in [2, 4, 6] {
            let g = jla_position_gradient(&leg, &q, p);
            for i in 0..3 {
                let h = 1e-6;
                let mut a = q;
                let mut b = q;
                a[i] += h;
                b[i] -= h;
                let fd = (jla_position_cost(&leg, &a, p) - jla_position_cost(&leg, &b, p)) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-7, "p={p} i={i} fd={fd} g={}", g[i]);
            }
        }
    }

    #[test]
    fn jla_vector_is_capped() {
        let leg = planar_leg(&[1.0, 1.0]);
        let cfg = JlaConfig {
            p: 2,
            position_weight: 100.0,
            velocity_weight: 0.0,
            max_norm: 0.01,
        };
        let v = jla_vector(&leg, &[2.5, -2.5], &cfg, None);
        assert!((v.norm() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn velocity_term_opposes_motion() {
        let leg = planar_leg(&[1.0, 1.0]);
        let prev = [0.0, 0.0];
        let g = jla_velocity_gradient(&leg, &[0.01, -0.02], VelocityReference { q_prev: &prev, dt: 0.005 }, 2);
        assert!(g[0] > 0.0 && g[1] < 0.0);
    }

    #[test]
    fn fixed_point_target() {
        let leg = planar_leg(&[1.0, 1.0]);
        let q = [0.3, 0.8];
        let target = IkTarget::Position(forward_kinematics(&leg, &q).translation());
        let sol = solve_ik(&leg, &q, &target, &IkOptions::default(), None);
        assert!(sol.converged);
        assert!(sol.iterations <= 1);
        assert!((sol.q[0] - 0.3).abs() < 1e-12 && (sol.q[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn unreachable_target_reports_failure() {
        let leg = planar_leg(&[1.0, 1.0]);
        let target = IkTarget::Position(Vector3::new(3.0, 0.0, 0.0));
        let sol = solve_ik(&leg, &[0.2, 0.4], &target, &IkOptions { max_iterations: 500, ..Default::default() }, None);
        assert!(!sol.converged);
        let reach = sol.tip.translation().norm();
        assert!((reach - 2.0).abs() < 1e-3, "reach {reach}");
    }

    #[test]
    fn clamped_solution_stays_in_limits() {
        let mut leg = planar_leg(&[1.0, 1.0]);
        leg.joints[1].spec.position_min = 0.2;
        leg.joints[1].spec.position_max = 1.0;
        let target = IkTarget::Position(Vector3::new(0.0, 2.0, 0.0));
        let sol = solve_ik(&leg, &[0.0, 0.5], &target, &IkOptions::default(), None);
        assert!(leg.within_limits(sol.q.as_slice()));
        assert!(!sol.converged);
    }

    #[test]
    fn pose_target_converges() {
        let leg = planar_leg(&[0.5, 0.4, 0.3]);
        let q = [0.3, 0.5, -0.4];
        let target = IkTarget::Pose(forward_kinematics(&leg, &q));
        let opts = IkOptions {
            orientation_weight: 1.0,
            max_iterations: 500,
            ..Default::default()
        };
        let sol = solve_ik(&leg, &[0.0, 0.2, 0.1], &target, &opts, None);
        assert!(sol.converged, "error {}", sol.error);
        assert!(sol.tip.max_abs_diff(&forward_kinematics(&leg, &q)) < 1e-8);
    }

    #[test]
    fn axis_target_is_five_constraints() {
        // 3 planar links: position (2) and link direction (1) pin everything
        let leg = planar_leg(&[0.5, 0.4, 0.3]);
        let q = [0.3, 0.5, -0.4];
        let fk = forward_kinematics(&leg, &q);
        let target = IkTarget::PositionAxis(fk.translation(), fk.rotation().column(0).into_owned());
        let opts = IkOptions {
            orientation_weight: 1.0,
            max_iterations: 500,
            ..Default::default()
        };
        let sol = solve_ik(&leg, &[0.0, 0.2, 0.1], &target, &opts, None);
        assert!(sol.converged, "error {}", sol.error);
        for i in 0..3 {
            assert!((sol.q[i] - q[i]).abs() < 1e-6);
        }
    }
}
