use super::PoseError;
use crate::model::{Keyframe, RobotSpec};

#[derive(Clone, Debug, PartialEq)]
struct Segment {
    from: Vec<Vec<f64>>,
    to: Vec<Vec<f64>>,
    duration: f64,
}

/// Plays a list of joint-space keyframes by linear interpolation. Segment
/// durations are stretched so no joint exceeds its velocity limit.
#[derive(Clone, Debug, PartialEq)]
pub struct SequencePlayer {
    segments: Vec<Segment>,
    index: usize,
    elapsed: f64,
    current: Vec<Vec<f64>>,
}

fn stretched(robot: &RobotSpec, from: &[Vec<f64>], to: &[Vec<f64>], nominal: f64) -> f64 {
    let mut d = nominal;
    for (leg, (a, b)) in robot.legs.iter().zip(from.iter().zip(to)) {
        for (j, (x, y)) in leg.joints.iter().zip(a.iter().zip(b)) {
            d = d.max((y - x).abs() / j.spec.velocity_max);
        }
    }
    d
}

fn check_shape(robot: &RobotSpec, q: &[Vec<f64>], what: &str) -> Result<(), PoseError> {
    if q.len() != robot.leg_count() || robot.legs.iter().zip(q).any(|(l, row)| row.len() != l.joint_count()) {
        return Err(PoseError::Sequence(format!("{what}: angle rows do not match the robot")));
    }
    if robot.legs.iter().zip(q).any(|(l, row)| !l.within_limits(row)) {
        return Err(PoseError::Sequence(format!("{what}: angles outside joint limits")));
    }
    Ok(())
}

/// Builds a player from `start` through each keyframe and, when given, a
/// final segment to `finish`.
pub fn plan_sequence(
    robot: &RobotSpec,
    keyframes: &[Keyframe],
    start: &[Vec<f64>],
    finish: Option<&[Vec<f64>]>,
) -> Result<SequencePlayer, PoseError> {
    check_shape(robot, start, "start")?;
    let mut segments = Vec::new();
    let mut from = start.to_vec();
    for (i, kf) in keyframes.iter().enumerate() {
        check_shape(robot, &kf.angles, &format!("keyframe {i}"))?;
        if !(kf.duration > 0.0 && kf.duration.is_finite()) {
            return Err(PoseError::Sequence(format!("keyframe {i}: duration must be > 0")));
        }
        let duration = stretched(robot, &from, &kf.angles, kf.duration);
        segments.push(Segment { from: from.clone(), to: kf.angles.clone(), duration });
        from = kf.angles.clone();
    }
    if let Some(fin) = finish {
        check_shape(robot, fin, "finish")?;
        let duration = stretched(robot, &from, fin, 0.0);
        if duration > 0.0 {
            segments.push(Segment { from, to: fin.to_vec(), duration });
        }
    }
    Ok(SequencePlayer {
        segments,
        index: 0,
        elapsed: 0.0,
        current: start.to_vec(),
    })
}

impl SequencePlayer {
    pub fn finished(&self) -> bool {
        self.index >= self.segments.len()
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Fraction of the whole sequence played.
    pub fn progress(&self) -> f64 {
        let total = self.duration();
        if total == 0.0 {
            return 1.0;
        }
        let done: f64 = self.segments[..self.index.min(self.segments.len())].iter().map(|s| s.duration).sum();
        ((done + self.elapsed) / total).min(1.0)
    }

    pub fn current(&self) -> &[Vec<f64>] {
        &self.current
    }

    /// Advances by `dt` and returns the joint targets.
    pub fn step(&mut self, dt: f64) -> &[Vec<f64>] {
        let mut left = dt;
        while left > 0.0 && !self.finished() {
            let seg = &self.segments[self.index];
            let room = seg.duration - self.elapsed;
            if left >= room {
                left -= room;
                self.current = seg.to.clone();
                self.index += 1;
                self.elapsed = 0.0;
            } else {
                self.elapsed += left;
                left = 0.0;
                let w = self.elapsed / seg.duration;
                self.current = seg
                    .from
                    .iter()
                    .zip(&seg.to)
                    .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect())
                    .collect();
            }
        }
        &self.current
    }
}
