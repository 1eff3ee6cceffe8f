//! Live operation: the tick engine that owns controller and simulator,
//! applies operator commands, enforces the dead-man timeout and produces
//! decimated state messages. Transport lives in the server crate.

pub mod protocol;

pub use protocol::*;

use crate::kinematics::Transform;
use crate::model::{GaitSpec, Pose, RobotSpec};
use crate::ops::{Event, OpsError, RunOptions, Runner};
use crate::robotctrl::ControlError;
use crate::sim::{EnergyRecord, GRAVITY};
use crate::workspace::{default_tips_xy, limit_velocity, PlanarVelocity, Walkspace};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// s without commands before the velocity is zeroed.
    pub deadman_timeout: f64,
    /// Hz.
    pub stream_rate: f64,
    /// s of samples behind the rolling cost of transport.
    pub cot_window: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            deadman_timeout: 0.5,
            stream_rate: 20.0,
            cot_window: 5.0,
        }
    }
}

pub struct TeleopEngine {
    runner: Runner,
    gaits: Vec<String>,
    cfg: EngineConfig,
    tick_rate: f64,
    decimation: u64,
    deadman_ticks: u64,
    last_command: u64,
    ticks: u64,
    dead_man: bool,
    energy: VecDeque<EnergyRecord>,
    poses: VecDeque<(f64, Transform)>,
    armed: bool,
    latest: Option<StateMessage>,
}

fn yaw_of(t: &Transform) -> f64 {
    t.rpy().z
}

impl TeleopEngine {
    pub fn new(robot: &RobotSpec, gaits: &[GaitSpec], walkspace: Walkspace, opts: &RunOptions, cfg: EngineConfig) -> Result<Self, OpsError> {
        if !(cfg.stream_rate > 0.0 && cfg.stream_rate <= opts.tick_rate) {
            return Err(OpsError::Invalid(format!("stream rate must be in (0, {}] Hz", opts.tick_rate)));
        }
        if !(cfg.deadman_timeout > 0.0 && cfg.cot_window > 0.0) {
            return Err(OpsError::Invalid("dead-man timeout and CoT window must be > 0".into()));
        }
        let runner = Runner::new(robot, gaits, walkspace, opts)?;
        let mut e = Self {
            gaits: gaits.iter().map(|g| g.name.clone()).collect(),
            tick_rate: opts.tick_rate,
            decimation: ((opts.tick_rate / cfg.stream_rate).round() as u64).max(1),
            deadman_ticks: (cfg.deadman_timeout * opts.tick_rate).round() as u64,
            last_command: 0,
            ticks: 0,
            dead_man: false,
            energy: VecDeque::new(),
            poses: VecDeque::new(),
            armed: false,
            latest: None,
            cfg,
            runner,
        };
        e.latest = Some(e.build_state(0.0));
        Ok(e)
    }

    pub fn runner(&self) -> &Runner {
        &self.runner
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn tick_rate(&self) -> f64 {
        self.tick_rate
    }

    /// Ticks between streamed states.
    pub fn decimation(&self) -> u64 {
        self.decimation
    }

    /// Latest state, also kept between streamed ticks.
    pub fn latest(&self) -> &StateMessage {
        self.latest.as_ref().expect("state built at construction")
    }

    /// Applies one operator command; any command resets the dead-man timer.
    pub fn apply(&mut self, command: &Command) -> Result<(), ControlError> {
        self.last_command = self.ticks;
        self.armed = true;
        self.dead_man = false;
        for e in command.events() {
            self.runner.apply(&e).map_err(|e| match e {
                OpsError::Control(c) => c,
                other => ControlError::Rejected(other.to_string()),
            })?;
        }
        Ok(())
    }

    /// One control tick; returns a state on every `decimation`-th tick.
    pub fn tick(&mut self) -> Result<Option<StateMessage>, OpsError> {
        if self.armed && !self.dead_man && self.ticks - self.last_command >= self.deadman_ticks {
            self.runner.apply(&Event::Velocity { velocity: PlanarVelocity::default() })?;
            self.runner.apply(&Event::PoseVelocity { rates: [0.0; 6] })?;
            self.dead_man = true;
        }
        let out = self.runner.step()?;
        self.ticks += 1;
        let rec = out.report.record;
        self.energy.push_back(rec);
        while self.energy.front().is_some_and(|r| rec.time - r.time > self.cfg.cot_window) {
            self.energy.pop_front();
        }
        self.poses.push_back((rec.time, *self.runner.sim().body()));
        while self.poses.front().is_some_and(|(t, _)| rec.time - t > 1.0) {
            self.poses.pop_front();
        }
        if self.ticks % self.decimation == 0 {
            let state = self.build_state(out.report.power);
            self.latest = Some(state.clone());
            Ok(Some(state))
        } else {
            Ok(None)
        }
    }

    fn achieved_velocity(&self) -> PlanarVelocity {
        let (Some((t0, a)), Some((t1, b))) = (self.poses.front(), self.poses.back()) else {
            return PlanarVelocity::default();
        };
        let dt = t1 - t0;
        if dt <= 0.0 {
            return PlanarVelocity::default();
        }
        let d = b.translation() - a.translation();
        let yaw = yaw_of(b);
        let (s, c) = yaw.sin_cos();
        let dyaw = (yaw - yaw_of(a) + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
        PlanarVelocity::new((c * d.x + s * d.y) / dt, (-s * d.x + c * d.y) / dt, dyaw / dt)
    }

    fn rolling_cot(&self) -> Option<f64> {
        let (first, last) = (self.energy.front()?, self.energy.back()?);
        let dx = last.distance - first.distance;
        let dt = last.time - first.time;
        if dx <= 1e-9 || dt <= 0.0 {
            return None;
        }
        let mean = self.energy.iter().map(|r| r.power).sum::<f64>() / self.energy.len() as f64;
        Some(mean / (self.runner.controller().robot().mass * GRAVITY * dx / dt))
    }

    fn build_state(&self, power: f64) -> StateMessage {
        let snap = self.runner.controller().snapshot();
        let sim = self.runner.sim();
        StateMessage {
            proto: PROTO_VERSION,
            tick: self.ticks,
            time: self.ticks as f64 / self.tick_rate,
            mode: snap.mode,
            walk_state: snap.walk_state,
            gait: snap.gait,
            step_frequency: snap.step_frequency,
            body: BodyState { world: Pose::from_transform(sim.body()), poses: snap.pose },
            legs: snap.legs,
            metrics: Metrics {
                power,
                cot: self.rolling_cot(),
                velocity_target: snap.velocity_target,
                velocity_commanded: snap.velocity_commanded,
                velocity_achieved: self.achieved_velocity(),
                distance: sim.distance(),
            },
            dead_man: self.dead_man,
        }
    }

    pub fn hello(&self, session: u64) -> Hello {
        let c = self.runner.controller();
        let robot = c.robot();
        let ws = c.walkspace();
        let f = c.walk().effective_frequency();
        let beta = c.walk().duty_factor();
        let tips = default_tips_xy(robot);
        let lim = |v: PlanarVelocity| limit_velocity(&v, ws, f, beta, &tips);
        let big = 100.0;
        let legs = robot
            .legs
            .iter()
            .map(|l| LegSummary {
                id: l.id,
                base: l.base_frame,
                default_tip: l.default_tip,
                joints: l.joints.iter().map(|j| j.spec.name.clone()).collect(),
                walkspace: ws.vertices().iter().map(|v| [l.default_tip[0] + v.x, l.default_tip[1] + v.y]).collect(),
            })
            .collect();
        Hello {
            proto: PROTO_VERSION,
            session,
            robot: RobotSummary {
                name: robot.name.clone(),
                mass: robot.mass,
                body_clearance: robot.body_clearance,
                legs,
            },
            gaits: self.gaits.clone(),
            tick_rate: self.tick_rate,
            stream_rate: self.cfg.stream_rate,
            deadman_timeout: self.cfg.deadman_timeout,
            max_velocity: PlanarVelocity::new(
                lim(PlanarVelocity::new(big, 0.0, 0.0)).x,
                lim(PlanarVelocity::new(0.0, big, 0.0)).y,
                lim(PlanarVelocity::new(0.0, 0.0, big)).yaw,
            ),
        }
    }
}
