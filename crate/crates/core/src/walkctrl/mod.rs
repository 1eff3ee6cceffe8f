//! Gait timing, stride vectors, three-curve step cycles and the per-tick
//! walk controller that turns a body velocity into tip positions.

mod bezier;
mod cycle;

pub use bezier::{bezier, bezier_derivative, bezier_integral, ControlPoints};
pub use cycle::{build_step_cycle, CycleTiming, LegPhase, StepCycle, SwingShape, TipTarget};

use crate::model::{GaitSpec, RobotSpec, WalkParams};
use crate::workspace::{stride_for, PlanarVelocity};
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WalkError {
    #[error("curve parameter {0} outside [0, 1]")]
    CurveParameter(f64),
    #[error("unknown leg index {0}")]
    UnknownLeg(usize),
    #[error("unknown gait `{0}`")]
    UnknownGait(String),
    #[error("gait `{gait}` defines {defined} legs, robot has {legs}")]
    GaitLegCount { gait: String, defined: usize, legs: usize },
    #[error("step timing must be positive")]
    Timing,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid step frequency {0}")]
    StepFrequency(f64),
}

/// Phase-unit timing: `tick` counts phase units.
pub fn gait_timing(gait: &GaitSpec, tick: u64, leg_index: usize) -> Result<(LegPhase, f64), WalkError> {
    let s = GaitClock::new(gait.clone(), 1).state(tick, leg_index)?;
    Ok((s.phase, s.progress))
}

/// A leg's place in the gait at a given tick.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub phase: LegPhase,
    /// Ticks elapsed in the current phase.
    pub elapsed: u64,
    /// Length of the current phase in ticks.
    pub length: u64,
    /// elapsed / length.
    pub progress: f64,
}

/// Gait scaled to ticks: every phase unit lasts `ticks_per_unit` ticks.
#[derive(Clone, Debug, PartialEq)]
pub struct GaitClock {
    pub gait: GaitSpec,
    pub ticks_per_unit: u64,
}

impl GaitClock {
    pub fn new(gait: GaitSpec, ticks_per_unit: u64) -> Self {
        Self {
            gait,
            ticks_per_unit: ticks_per_unit.max(1),
        }
    }

    /// Period of `round(tick_rate / f_s)` ticks, split by the gait's unit ratio.
    pub fn for_frequency(gait: GaitSpec, tick_rate: f64, step_frequency: f64) -> Result<Self, WalkError> {
        if !(step_frequency > 0.0 && step_frequency.is_finite()) {
            return Err(WalkError::StepFrequency(step_frequency));
        }
        let u = (tick_rate / (step_frequency * f64::from(gait.period()))).round().max(1.0) as u64;
        Ok(Self::new(gait, u))
    }

    pub fn period_ticks(&self) -> u64 {
        u64::from(self.gait.period()) * self.ticks_per_unit
    }

    pub fn stance_ticks(&self) -> u64 {
        u64::from(self.gait.stance_phase) * self.ticks_per_unit
    }

    pub fn swing_ticks(&self) -> u64 {
        u64::from(self.gait.swing_phase) * self.ticks_per_unit
    }

    /// Step frequency actually realised at `tick_rate`.
    pub fn frequency(&self, tick_rate: f64) -> f64 {
        tick_rate / self.period_ticks() as f64
    }

    pub fn state(&self, tick: u64, leg_index: usize) -> Result<ScheduleState, WalkError> {
        let offset = self.gait.leg_offset(leg_index).ok_or(WalkError::UnknownLeg(leg_index))?;
        let n = self.period_ticks();
        let shift = u64::from(offset) * self.ticks_per_unit;
        let local = (tick % n + n - shift % n) % n;
        let stance = self.stance_ticks();
        Ok(if local < stance {
            ScheduleState {
                phase: LegPhase::Stance,
                elapsed: local,
                length: stance,
                progress: local as f64 / stance as f64,
            }
        } else {
            let swing = self.swing_ticks();
            ScheduleState {
                phase: LegPhase::Swing,
                elapsed: local - stance,
                length: swing,
                progress: (local - stance) as f64 / swing as f64,
            }
        })
    }
}

/// Stride of one leg: (v + ω ẑ × r)·β / f_s with r the default tip.
pub fn stride_vector(v: &PlanarVelocity, default_tip: &Vector3<f64>, duty_factor: f64, step_frequency: f64) -> Vector2<f64> {
    stride_for(v, &default_tip.xy(), step_frequency, duty_factor)
}

/// Planar displacement (dx, dy, dyaw) of the body over `dt` under a constant twist.
pub fn twist_increment(v: &PlanarVelocity, dt: f64) -> (Vector2<f64>, f64) {
    let th = v.yaw * dt;
    if th.abs() < 1e-12 {
        return (Vector2::new(v.x * dt, v.y * dt), th);
    }
    let (s, c) = th.sin_cos();
    let dx = (v.x * s - v.y * (1.0 - c)) / v.yaw;
    let dy = (v.x * (1.0 - c) + v.y * s) / v.yaw;
    (Vector2::new(dx, dy), th)
}

/// Moves a ground-fixed point into the body frame after the body moved by
/// `(d, th)` (expressed in the old body frame).
pub fn apply_rigid_stance(p: &Vector3<f64>, d: &Vector2<f64>, th: f64) -> Vector3<f64> {
    let (s, c) = th.sin_cos();
    let x = p.x - d.x;
    let y = p.y - d.y;
    Vector3::new(c * x + s * y, -s * x + c * y, p.z)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkState {
    Stopped,
    Walking,
}

#[derive(Clone, Debug, PartialEq)]
enum LegMotion {
    Stance,
    Swing { cycle: StepCycle, elapsed: u64, length: u64 },
    /// Operator-driven tip, outside the gait.
    Manual,
}

#[derive(Clone, Debug, PartialEq)]
struct LegWalk {
    tip: Vector3<f64>,
    motion: LegMotion,
    stride: Vector2<f64>,
    progress: f64,
    phase: LegPhase,
}

/// Per-leg output of one walk tick, in the body frame at the default pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegWalkOutput {
    pub tip: [f64; 3],
    pub phase: LegPhase,
    pub progress: f64,
    pub stride: [f64; 2],
    pub manual: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WalkOutput {
    pub state: WalkState,
    pub velocity: PlanarVelocity,
    pub legs: Vec<LegWalkOutput>,
    /// Body displacement commanded this tick (dx, dy in the previous body frame, dyaw).
    pub increment: (Vector2<f64>, f64),
    /// True at ticks where a new gait cycle starts.
    pub cycle_start: bool,
}

/// Tick-driven gait engine. Owns every leg's tip position in the default
/// body frame; stance legs move with the body twist, swing legs follow
/// their step cycle.
#[derive(Clone, Debug)]
pub struct WalkController {
    params: WalkParams,
    tick_rate: f64,
    dt: f64,
    clock: GaitClock,
    step_frequency: f64,
    pending_gait: Option<GaitSpec>,
    pending_frequency: Option<f64>,
    tick: u64,
    state: WalkState,
    velocity: PlanarVelocity,
    defaults: Vec<Vector3<f64>>,
    clearance: f64,
    legs: Vec<LegWalk>,
}

fn check_gait(gait: &GaitSpec, legs: usize) -> Result<(), WalkError> {
    if gait.offset_multiplier.len() < legs {
        return Err(WalkError::GaitLegCount {
            gait: gait.name.clone(),
            defined: gait.offset_multiplier.len(),
            legs,
        });
    }
    Ok(())
}

impl WalkController {
    pub fn new(robot: &RobotSpec, gait: GaitSpec, tick_rate: f64) -> Result<Self, WalkError> {
        check_gait(&gait, robot.leg_count())?;
        let clock = GaitClock::for_frequency(gait, tick_rate, robot.step_frequency)?;
        let defaults: Vec<Vector3<f64>> = robot.legs.iter().map(|l| l.default_tip()).collect();
        Ok(Self {
            params: robot.walk.clone(),
            tick_rate,
            dt: 1.0 / tick_rate,
            step_frequency: robot.step_frequency,
            clock,
            pending_gait: None,
            pending_frequency: None,
            tick: 0,
            state: WalkState::Stopped,
            velocity: PlanarVelocity::default(),
            legs: defaults
                .iter()
                .map(|d| LegWalk {
                    tip: *d,
                    motion: LegMotion::Stance,
                    stride: Vector2::zeros(),
                    progress: 0.0,
                    phase: LegPhase::Stance,
                })
                .collect(),
            defaults,
            clearance: robot.step_clearance,
        })
    }

    pub fn state(&self) -> WalkState {
        self.state
    }

    pub fn gait(&self) -> &GaitSpec {
        &self.clock.gait
    }

    pub fn clock(&self) -> &GaitClock {
        &self.clock
    }

    pub fn velocity(&self) -> PlanarVelocity {
        self.velocity
    }

    /// Requested (not quantised) step frequency.
    pub fn step_frequency(&self) -> f64 {
        self.step_frequency
    }

    /// Realised step frequency.
    pub fn effective_frequency(&self) -> f64 {
        self.clock.frequency(self.tick_rate)
    }

    pub fn duty_factor(&self) -> f64 {
        self.clock.gait.duty_factor()
    }

    /// Gait phase fraction in [0, 1).
    pub fn phase_fraction(&self) -> f64 {
        (self.tick % self.clock.period_ticks()) as f64 / self.clock.period_ticks() as f64
    }

    pub fn tips(&self) -> Vec<Vector3<f64>> {
        self.legs.iter().map(|l| l.tip).collect()
    }

    /// Phase and progress reported by the last tick.
    pub fn leg_phase(&self, leg: usize) -> (LegPhase, f64) {
        let l = &self.legs[leg];
        (l.phase, l.progress)
    }

    pub fn defaults(&self) -> &[Vector3<f64>] {
        &self.defaults
    }

    /// Takes effect at the next cycle boundary (immediately when stopped).
    pub fn request_gait(&mut self, gait: GaitSpec) -> Result<(), WalkError> {
        check_gait(&gait, self.legs.len())?;
        if self.state == WalkState::Stopped {
            self.clock = GaitClock::for_frequency(gait, self.tick_rate, self.step_frequency)?;
            self.pending_gait = None;
        } else {
            self.pending_gait = Some(gait);
        }
        Ok(())
    }

    pub fn pending_gait(&self) -> Option<&GaitSpec> {
        self.pending_gait.as_ref()
    }

    pub fn request_step_frequency(&mut self, f: f64) -> Result<(), WalkError> {
        if !(f > 0.0 && f.is_finite()) {
            return Err(WalkError::StepFrequency(f));
        }
        if self.state == WalkState::Stopped {
            self.step_frequency = f;
            self.clock = GaitClock::for_frequency(self.clock.gait.clone(), self.tick_rate, f)?;
        } else {
            self.pending_frequency = Some(f);
        }
        Ok(())
    }

    pub fn is_manual(&self, leg: usize) -> bool {
        matches!(self.legs.get(leg).map(|l| &l.motion), Some(LegMotion::Manual))
    }

    pub fn any_manual(&self) -> bool {
        self.legs.iter().any(|l| l.motion == LegMotion::Manual)
    }

    /// Hands a leg to the operator; only while stopped.
    pub fn set_manual(&mut self, leg: usize, manual: bool) -> Result<bool, WalkError> {
        let n_swing = self.clock.swing_ticks();
        let shape = self.shape(leg);
        let timing = self.timing();
        let default = *self.defaults.get(leg).ok_or(WalkError::UnknownLeg(leg))?;
        let l = &mut self.legs[leg];
        match (manual, &l.motion) {
            (true, LegMotion::Stance) if self.state == WalkState::Stopped => {
                l.motion = LegMotion::Manual;
                Ok(true)
            }
            (false, LegMotion::Manual) => {
                // step back to the default tip
                let cycle = build_step_cycle(Vector2::zeros(), default, &shape, timing, Some(l.tip))?;
                l.motion = LegMotion::Swing {
                    cycle,
                    elapsed: 0,
                    length: n_swing,
                };
                self.state = WalkState::Walking;
                Ok(true)
            }
            _ => Ok(false),
        }
    }

    /// Moves a manual leg's tip by `v·dt`. Ignored for legs in the gait.
    pub fn manual_velocity(&mut self, leg: usize, v: &Vector3<f64>) -> Result<(), WalkError> {
        let dt = self.dt;
        let l = self.legs.get_mut(leg).ok_or(WalkError::UnknownLeg(leg))?;
        if l.motion == LegMotion::Manual {
            l.tip += v * dt;
        }
        Ok(())
    }

    pub fn manual_position(&mut self, leg: usize, p: &Vector3<f64>) -> Result<(), WalkError> {
        let l = self.legs.get_mut(leg).ok_or(WalkError::UnknownLeg(leg))?;
        if l.motion == LegMotion::Manual {
            l.tip = *p;
        }
        Ok(())
    }

    fn shape(&self, leg: usize) -> SwingShape {
        let d = self.defaults.get(leg).copied().unwrap_or_default();
        let out = d.xy();
        SwingShape {
            clearance: self.clearance,
            width: self.params.swing_width,
            depth: self.params.swing_depth,
            outward: if out.norm() > 0.0 { out.normalize() } else { Vector2::zeros() },
        }
    }

    fn timing(&self) -> CycleTiming {
        CycleTiming {
            swing: self.clock.swing_ticks() as f64 * self.dt,
            stance: self.clock.stance_ticks() as f64 * self.dt,
        }
    }

    fn ramp(&mut self, target: &PlanarVelocity) {
        let a_lin = self.params.max_linear_acceleration * self.dt;
        let a_ang = self.params.max_angular_acceleration * self.dt;
        let cur = Vector2::new(self.velocity.x, self.velocity.y);
        let want = Vector2::new(target.x, target.y);
        let diff = want - cur;
        let lin = if diff.norm() <= a_lin { want } else { cur + diff.normalize() * a_lin };
        let dyaw = target.yaw - self.velocity.yaw;
        let yaw = if dyaw.abs() <= a_ang { target.yaw } else { self.velocity.yaw + a_ang * dyaw.signum() };
        self.velocity = PlanarVelocity::new(lin.x, lin.y, yaw);
    }

    fn at_default(&self, leg: usize) -> bool {
        let d = self.defaults[leg] - Vector3::new(0.0, 0.0, self.params.swing_depth);
        (self.legs[leg].tip - d).norm() < 1e-9
    }

    /// Advances one tick toward the (already workspace-limited) body velocity.
    pub fn tick(&mut self, target: &PlanarVelocity) -> Result<WalkOutput, WalkError> {
        if !(target.x.is_finite() && target.y.is_finite() && target.yaw.is_finite()) {
            return Err(WalkError::NonFinite("velocity"));
        }
        let mut cycle_start = false;
        if self.state == WalkState::Stopped && !target.is_zero() && !self.any_manual() {
            self.state = WalkState::Walking;
            self.tick = 0;
        }
        if self.state == WalkState::Stopped {
            return Ok(self.output(Vector2::zeros(), 0.0, false));
        }
        if self.tick % self.clock.period_ticks() == 0 {
            cycle_start = true;
            let mut changed = false;
            if let Some(f) = self.pending_frequency.take() {
                self.step_frequency = f;
                changed = true;
            }
            let gait = self.pending_gait.take();
            if gait.is_some() || changed {
                let g = gait.unwrap_or_else(|| self.clock.gait.clone());
                self.clock = GaitClock::for_frequency(g, self.tick_rate, self.step_frequency)?;
                self.tick = 0;
            }
        }
        if self.any_manual() {
            self.ramp(&PlanarVelocity::default());
        } else {
            self.ramp(target);
        }
        let (d, th) = twist_increment(&self.velocity, self.dt);
        let beta = self.duty_factor();
        let f = self.effective_frequency();
        let timing = self.timing();
        let stopping = self.velocity.is_zero() && target.is_zero();

        for i in 0..self.legs.len() {
            let sched = self.clock.state(self.tick, i)?;
            let stride = stride_vector(&self.velocity, &self.defaults[i], beta, f);
            let shape = self.shape(i);
            let default = self.defaults[i];
            let parked = stopping && self.at_default(i);
            let leg = &mut self.legs[i];
            match &mut leg.motion {
                LegMotion::Manual => leg.phase = LegPhase::Stance,
                LegMotion::Swing { cycle, elapsed, length } => {
                    leg.phase = LegPhase::Swing;
                    *elapsed += 1;
                    let t = *elapsed as f64 / *length as f64;
                    leg.tip = cycle.swing_position(t.min(1.0))?;
                    leg.progress = t;
                    if *elapsed >= *length {
                        leg.motion = LegMotion::Stance;
                    }
                }
                LegMotion::Stance => {
                    if sched.phase == LegPhase::Swing && sched.elapsed == 0 && !parked {
                        let cycle = build_step_cycle(stride, default, &shape, timing, Some(leg.tip))?;
                        let length = sched.length;
                        leg.stride = stride;
                        let t = 1.0 / length as f64;
                        leg.tip = cycle.swing_position(t.min(1.0))?;
                        leg.progress = t;
                        leg.phase = LegPhase::Swing;
                        leg.motion = if length <= 1 {
                            LegMotion::Stance
                        } else {
                            LegMotion::Swing { cycle, elapsed: 1, length }
                        };
                    } else {
                        leg.tip = apply_rigid_stance(&leg.tip, &d, th);
                        leg.phase = LegPhase::Stance;
                        leg.progress = if sched.phase == LegPhase::Stance { sched.progress } else { 0.0 };
                    }
                }
            }
        }
        self.tick += 1;
        let all_parked = stopping
            && (0..self.legs.len()).all(|i| self.legs[i].motion == LegMotion::Stance && self.at_default(i));
        if all_parked {
            self.state = WalkState::Stopped;
            self.velocity = PlanarVelocity::default();
            if let Some(g) = self.pending_gait.take() {
                self.clock = GaitClock::for_frequency(g, self.tick_rate, self.step_frequency)?;
            }
            if let Some(f) = self.pending_frequency.take() {
                self.step_frequency = f;
                self.clock = GaitClock::for_frequency(self.clock.gait.clone(), self.tick_rate, f)?;
            }
        }
        Ok(self.output(d, th, cycle_start))
    }

    fn output(&self, d: Vector2<f64>, th: f64, cycle_start: bool) -> WalkOutput {
        WalkOutput {
            state: self.state,
            velocity: self.velocity,
            increment: (d, th),
            cycle_start,
            legs: self
                .legs
                .iter()
                .map(|l| LegWalkOutput {
                    tip: [l.tip.x, l.tip.y, l.tip.z],
                    phase: l.phase,
                    progress: l.progress,
                    stride: [l.stride.x, l.stride.y],
                    manual: l.motion == LegMotion::Manual,
                })
                .collect(),
        }
    }
}
