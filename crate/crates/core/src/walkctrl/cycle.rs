use super::bezier::{bezier, bezier_derivative, ControlPoints};
use super::WalkError;
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LegPhase {
    Stance,
    Swing,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleTiming {
    /// s.
    pub swing: f64,
    /// s.
    pub stance: f64,
}

/// Shape parameters of the swing.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SwingShape {
    pub clearance: f64,
    /// Lateral offset of the mid control points, along `outward`.
    pub width: f64,
    /// Touchdown depth below the default tip.
    pub depth: f64,
    /// Unit horizontal direction the width is applied in.
    pub outward: Vector2<f64>,
}

/// One leg's step: two swing halves sharing the apex, and the stance
/// expressed as velocity control points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepCycle {
    pub primary: ControlPoints,
    pub secondary: ControlPoints,
    /// Tip velocity control points in the body frame, m/s.
    pub stance: ControlPoints,
    pub timing: CycleTiming,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TipTarget {
    Position(Vector3<f64>),
    Velocity(Vector3<f64>),
}

fn horizontal(v: Vector2<f64>) -> Vector3<f64> {
    Vector3::new(v.x, v.y, 0.0)
}

/// Builds the step around `default_tip`. Stance runs from
/// `default + stride/2` to `default − stride/2` at constant velocity; the
/// swing leaves from `liftoff` (defaults to the stance end), peaks
/// `clearance` above the default tip, and lands on the stance start with
/// matching velocity at both ends.
pub fn build_step_cycle(
    stride: Vector2<f64>,
    default_tip: Vector3<f64>,
    shape: &SwingShape,
    timing: CycleTiming,
    liftoff: Option<Vector3<f64>>,
) -> Result<StepCycle, WalkError> {
    if !(timing.swing > 0.0 && timing.stance > 0.0) {
        return Err(WalkError::Timing);
    }
    if !(stride.x.is_finite() && stride.y.is_finite()) {
        return Err(WalkError::NonFinite("stride"));
    }
    let s = horizontal(stride);
    let v_stance = -s / timing.stance;
    let half_swing = 0.5 * timing.swing;
    let lift = liftoff.unwrap_or(default_tip - s * 0.5);
    let touchdown = default_tip + s * 0.5 - Vector3::new(0.0, 0.0, shape.depth);
    let apex = default_tip + Vector3::new(0.0, 0.0, shape.clearance);
    let lateral = horizontal(shape.outward) * shape.width;
    // horizontal tangent at the apex, continuous across the two halves
    let w = s / 8.0;

    let p1 = lift + v_stance * (half_swing / 4.0);
    let p3 = apex - w;
    let mut p2 = (p1 + p3) * 0.5 + lateral;
    p2.z = apex.z;
    let primary = [lift, p1, p2, p3, apex];

    let q1 = apex + w;
    let q3 = touchdown - v_stance * (half_swing / 4.0);
    let mut q2 = (q1 + q3) * 0.5 + lateral;
    q2.z = apex.z;
    let secondary = [apex, q1, q2, q3, touchdown];

    Ok(StepCycle {
        primary,
        secondary,
        stance: [v_stance; 5],
        timing,
    })
}

impl StepCycle {
    pub fn apex(&self) -> Vector3<f64> {
        self.primary[4]
    }

    /// Swing position at progress `t ∈ [0,1]`; the first half runs the
    /// primary curve, the second half the secondary.
    pub fn swing_position(&self, t: f64) -> Result<Vector3<f64>, WalkError> {
        if !(0.0..=1.0).contains(&t) {
            return Err(WalkError::CurveParameter(t));
        }
        if t < 0.5 {
            bezier(&self.primary, 2.0 * t)
        } else {
            bezier(&self.secondary, 2.0 * t - 1.0)
        }
    }

    /// Swing velocity (m/s) at progress `t`.
    pub fn swing_velocity(&self, t: f64) -> Result<Vector3<f64>, WalkError> {
        let half = 0.5 * self.timing.swing;
        if t < 0.5 {
            Ok(bezier_derivative(&self.primary, 2.0 * t)? / half)
        } else {
            Ok(bezier_derivative(&self.secondary, 2.0 * t - 1.0)? / half)
        }
    }

    pub fn stance_velocity(&self, t: f64) -> Result<Vector3<f64>, WalkError> {
        bezier(&self.stance, t)
    }

    pub fn tip_target(&self, phase: LegPhase, t: f64) -> Result<TipTarget, WalkError> {
        match phase {
            LegPhase::Swing => self.swing_position(t).map(TipTarget::Position),
            LegPhase::Stance => self.stance_velocity(t).map(TipTarget::Velocity),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> SwingShape {
        SwingShape {
            clearance: 0.05,
            ..Default::default()
        }
    }

    const TIMING: CycleTiming = CycleTiming { swing: 0.5, stance: 0.5 };

    #[test]
    fn zero_stride_is_vertical() {
        let d = Vector3::new(0.2, 0.1, -0.1);
        let c = build_step_cycle(Vector2::zeros(), d, &shape(), TIMING, None).unwrap();
        for i in 0..=20 {
            let p = c.swing_position(i as f64 / 20.0).unwrap();
            assert!((p.xy() - d.xy()).norm() < 1e-15);
        }
        assert!(c.stance.iter().all(|v| *v == Vector3::zeros()));
    }

    #[test]
    fn endpoints_and_apex() {
        let d = Vector3::new(0.2, 0.1, -0.1);
        let c = build_step_cycle(Vector2::new(0.2, 0.0), d, &shape(), TIMING, None).unwrap();
        assert!((c.swing_position(0.0).unwrap() - (d - Vector3::new(0.1, 0.0, 0.0))).norm() < 1e-15);
        assert!((c.swing_position(1.0).unwrap() - (d + Vector3::new(0.1, 0.0, 0.0))).norm() < 1e-15);
        assert_eq!(c.swing_position(0.5).unwrap(), d + Vector3::new(0.0, 0.0, 0.05));
        assert_eq!(c.primary[4], c.secondary[0]);
    }

    #[test]
    fn apex_is_highest_point() {
        let d = Vector3::new(0.2, 0.1, -0.1);
        let c = build_step_cycle(Vector2::new(0.15, -0.07), d, &shape(), TIMING, None).unwrap();
        let top = (0..=1000).map(|i| c.swing_position(i as f64 / 1000.0).unwrap().z).fold(f64::MIN, f64::max);
        assert!((top - (d.z + 0.05)).abs() < 1e-12);
    }

    #[test]
    fn stance_zero_stride_zero_velocity() {
        let c = build_step_cycle(Vector2::zeros(), Vector3::zeros(), &shape(), TIMING, None).unwrap();
        assert_eq!(c.tip_target(LegPhase::Stance, 0.3).unwrap(), TipTarget::Velocity(Vector3::zeros()));
    }
}
