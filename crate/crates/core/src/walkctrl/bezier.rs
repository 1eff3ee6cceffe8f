use super::WalkError;
use nalgebra::Vector3;

pub type ControlPoints = [Vector3<f64>; 5];

fn check(t: f64) -> Result<(), WalkError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(WalkError::CurveParameter(t))
    }
}

/// Quartic Bézier: s⁴P₀ + 4ts³P₁ + 6s²t²P₂ + 4st³P₃ + t⁴P₄, s = 1 − t.
pub fn bezier(p: &ControlPoints, t: f64) -> Result<Vector3<f64>, WalkError> {
    check(t)?;
    let s = 1.0 - t;
    Ok(p[0] * s.powi(4) + p[1] * (4.0 * t * s.powi(3)) + p[2] * (6.0 * s * s * t * t) + p[3] * (4.0 * s * t.powi(3)) + p[4] * t.powi(4))
}

/// d/dt of [`bezier`].
pub fn bezier_derivative(p: &ControlPoints, t: f64) -> Result<Vector3<f64>, WalkError> {
    check(t)?;
    let s = 1.0 - t;
    Ok((p[1] - p[0]) * (4.0 * s.powi(3))
        + (p[2] - p[1]) * (12.0 * s * s * t)
        + (p[3] - p[2]) * (12.0 * t * t * s)
        + (p[4] - p[3]) * (4.0 * t.powi(3)))
}

/// ∫₀¹ B(t) dt: each Bernstein basis integrates to 1/5.
pub fn bezier_integral(p: &ControlPoints) -> Vector3<f64> {
    p.iter().sum::<Vector3<f64>>() / 5.0
}
