//! Closed-loop runs of controller and simulator, scripted runs, sweeps and
//! the workspace cache.

pub mod export;
pub mod script;

pub use script::{parse_script, Event, Script, ScriptError, SweepSpec, TimedEvent};

use crate::model::{robot_spec_digest, GaitSpec, RobotSpec};
use crate::robotctrl::{ControlError, ControllerSnapshot, RobotController, RobotMode, Sensors};
use crate::sim::{cost_of_transport, EnergyRecord, SimConfig, SimError, Simulator, StepReport};
use crate::walkctrl::LegPhase;
use crate::workspace::{body_velocity, derive_walkspace, generate_all, SearchParams, Walkspace, WorkspaceError, WorkspacePolyhedron};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OpsError {
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> OpsError + '_ {
    move |source| OpsError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunOptions {
    /// Hz.
    pub tick_rate: f64,
    pub sim: SimConfig,
    /// Start in the default stance instead of packed.
    pub standing: bool,
    /// Feed simulated joint torques back as sensor readings.
    pub feed_torques: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            tick_rate: 200.0,
            sim: SimConfig::default(),
            standing: true,
            feed_torques: true,
        }
    }
}

/// One tick of the closed loop.
#[derive(Clone, Debug)]
pub struct TickOutput {
    pub snapshot: ControllerSnapshot,
    pub report: StepReport,
    /// Joint position or velocity limit violations this tick.
    pub violations: u64,
}

/// Single owner of controller and simulator; every tick runs the controller
/// on the last sensor readings and then the world.
#[derive(Clone, Debug)]
pub struct Runner {
    controller: RobotController,
    sim: Simulator,
    dt: f64,
    feed_torques: bool,
    imu: [f64; 2],
    torques: Option<Vec<Vec<f64>>>,
    violations: u64,
    max_residual: f64,
}

/// Feet carrying the body: stance legs under gait control. `None` while a
/// sequence or the packed pose decides contact geometrically.
pub fn support_set(snap: &ControllerSnapshot) -> Option<Vec<bool>> {
    match snap.mode {
        RobotMode::Ready | RobotMode::Walking | RobotMode::Legipulation => {
            Some(snap.legs.iter().map(|l| l.phase == LegPhase::Stance && !l.manual).collect())
        }
        _ => None,
    }
}

impl Runner {
    pub fn new(robot: &RobotSpec, gaits: &[GaitSpec], walkspace: Walkspace, opts: &RunOptions) -> Result<Self, OpsError> {
        if !(opts.tick_rate > 0.0 && opts.tick_rate.is_finite()) {
            return Err(OpsError::Invalid(format!("tick rate must be > 0, got {}", opts.tick_rate)));
        }
        let controller = if opts.standing {
            RobotController::new_standing(robot, gaits, walkspace, opts.tick_rate)?
        } else {
            RobotController::new(robot, gaits, walkspace, opts.tick_rate)?
        };
        let mut sim = Simulator::new(robot, opts.sim, controller.joint_positions());
        let imu = sim.read_imu();
        Ok(Self {
            controller,
            sim,
            dt: 1.0 / opts.tick_rate,
            feed_torques: opts.feed_torques,
            imu,
            torques: None,
            violations: 0,
            max_residual: 0.0,
        })
    }

    pub fn controller(&self) -> &RobotController {
        &self.controller
    }

    pub fn controller_mut(&mut self) -> &mut RobotController {
        &mut self.controller
    }

    pub fn sim(&self) -> &Simulator {
        &self.sim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn violations(&self) -> u64 {
        self.violations
    }

    /// Largest pinned-foot drift seen so far, m.
    pub fn max_residual(&self) -> f64 {
        self.max_residual
    }

    pub fn step(&mut self) -> Result<TickOutput, OpsError> {
        let sensors = Sensors {
            imu: Some(self.imu),
            torques: if self.feed_torques { self.torques.clone() } else { None },
        };
        let q_prev = self.controller.joint_positions().to_vec();
        let snapshot = self.controller.tick(&sensors)?;
        let q = self.controller.joint_positions();
        let mut violations = 0;
        for ((leg, qn), qp) in self.controller.robot().legs.iter().zip(q).zip(&q_prev) {
            for ((j, a), b) in leg.joints.iter().zip(qn).zip(qp) {
                let s = &j.spec;
                // one rounding of the velocity step is tolerated
                if !s.contains(*a) || (a - b).abs() > s.velocity_max * self.dt + 1e-12 {
                    violations += 1;
                }
            }
        }
        self.violations += violations;
        let support = support_set(&snapshot);
        let report = self.sim.step(q, support.as_deref(), self.dt)?;
        self.max_residual = self.max_residual.max(report.residual);
        self.imu = report.imu;
        self.torques = Some(report.torques.clone());
        Ok(TickOutput { snapshot, report, violations })
    }

    pub fn apply(&mut self, event: &Event) -> Result<(), OpsError> {
        let c = &mut self.controller;
        match event {
            Event::Mode { request } => c.request_mode(*request)?,
            Event::Velocity { velocity } => c.set_velocity(*velocity)?,
            Event::PoseVelocity { rates } => c.set_pose_velocity(*rates)?,
            Event::PoseMode { mode } => c.set_pose_mode(*mode),
            Event::Inclination { on } => c.set_inclination(*on),
            Event::Gait { name } => c.select_gait(name)?,
            Event::Frequency { hz } => c.set_step_frequency(*hz)?,
            Event::Legipulate { id, target } => c.legipulate(*id, *target)?,
            Event::Measure { .. } | Event::End => {}
        }
        Ok(())
    }
}

/// Per-tick row of a run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub tick: u64,
    pub time: f64,
    pub mode: RobotMode,
    /// World body position, m.
    pub position: [f64; 3],
    /// World body roll, pitch, yaw, rad.
    pub rpy: [f64; 3],
    pub q: Vec<f64>,
    pub torque: Vec<f64>,
    pub power: f64,
    /// Cost of transport since the measurement window opened; None before any distance.
    pub cot: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub ticks: u64,
    /// s.
    pub duration: f64,
    /// Path length over the measurement window, m.
    pub distance: f64,
    /// Length of the measurement window, s.
    pub measured_time: f64,
    /// Net world displacement over the whole run, m.
    pub displacement: [f64; 3],
    /// W.
    pub mean_power: f64,
    pub cot: Option<f64>,
    pub clamped_ticks: u64,
    pub limit_violations: u64,
    pub held_ticks: u64,
    pub max_residual: f64,
    /// Final body roll and pitch, rad.
    pub final_tilt: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub summary: RunSummary,
    pub log: Vec<LogRow>,
    /// Samples inside the measurement window.
    pub energy: Vec<EnergyRecord>,
}

/// Runs a script to its end. Without `measure` events the whole run is measured.
pub fn run_script(robot: &RobotSpec, gaits: &[GaitSpec], walkspace: &Walkspace, script: &Script, opts: &RunOptions) -> Result<RunResult, OpsError> {
    let mut runner = Runner::new(robot, gaits, walkspace.clone(), opts)?;
    let end = script.duration();
    let ticks = (end * opts.tick_rate).round() as u64;
    let mut measuring = !script.events.iter().any(|e| matches!(e.event, Event::Measure { .. }));
    let mut next = 0;
    let mut log = Vec::with_capacity(ticks as usize);
    let mut energy: Vec<EnergyRecord> = Vec::new();
    let mut sum_p = 0.0;
    let (mut d0, mut t0) = (0.0, 0.0);
    let window_start = |energy: &mut Vec<EnergyRecord>, sim: &Simulator| {
        energy.clear();
        (sim.distance(), sim.time())
    };
    for k in 0..ticks {
        let t = k as f64 / opts.tick_rate;
        while next < script.events.len() && script.events[next].t <= t + 1e-9 {
            let e = &script.events[next].event;
            runner.apply(e)?;
            if let Event::Measure { on } = e {
                if *on && !measuring {
                    (d0, t0) = window_start(&mut energy, runner.sim());
                    sum_p = 0.0;
                }
                measuring = *on;
            }
            next += 1;
        }
        let out = runner.step()?;
        let rec = out.report.record;
        if measuring {
            energy.push(rec);
            sum_p += rec.power;
        }
        let dist = runner.sim().distance() - d0;
        let cot = (measuring && dist > 0.0).then(|| sum_p / energy.len() as f64 / (robot.mass * crate::sim::GRAVITY * dist / (rec.time - t0)));
        let body = runner.sim().body();
        log.push(LogRow {
            tick: out.snapshot.tick,
            time: rec.time,
            mode: out.snapshot.mode,
            position: body.translation().into(),
            rpy: body.rpy().into(),
            q: runner.controller().joint_positions().concat(),
            torque: out.report.torques.concat(),
            power: rec.power,
            cot,
        });
    }
    let distance = match (energy.first(), energy.last()) {
        (Some(_), Some(l)) => l.distance - d0,
        _ => 0.0,
    };
    let measured_time = energy.last().map_or(0.0, |l| l.time - t0);
    let mean_power = if energy.is_empty() { 0.0 } else { energy.iter().map(|r| r.power).sum::<f64>() / energy.len() as f64 };
    let cot = (distance > 0.0).then(|| mean_power / (robot.mass * crate::sim::GRAVITY * distance / measured_time));
    let sim = runner.sim();
    let summary = RunSummary {
        ticks,
        duration: ticks as f64 / opts.tick_rate,
        distance,
        measured_time,
        displacement: sim.displacement().into(),
        mean_power,
        cot,
        clamped_ticks: runner.controller().clamp_stats().ticks,
        limit_violations: runner.violations(),
        held_ticks: sim.held_ticks(),
        max_residual: runner.max_residual(),
        final_tilt: sim.tilt(),
    };
    Ok(RunResult { summary, log, energy })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Hz.
    pub frequency: f64,
    /// m.
    pub stride: f64,
    /// Commanded speed, m/s.
    pub velocity: f64,
    pub distance: f64,
    pub mean_power: f64,
    pub cot: f64,
    pub clamped_ticks: u64,
}

/// The script variant for one sweep point: the step frequency is set first
/// and every moving velocity command is rescaled to the fixed stride.
pub fn sweep_variant(robot: &RobotSpec, gaits: &[GaitSpec], script: &Script, frequency: f64, stride: f64) -> Result<(Script, f64), OpsError> {
    let gait_name = script
        .events
        .iter()
        .find_map(|e| match &e.event {
            Event::Gait { name } => Some(name.clone()),
            _ => None,
        })
        .unwrap_or_else(|| robot.walk.default_gait.clone());
    let gait = gaits.iter().find(|g| g.name == gait_name).ok_or_else(|| OpsError::Invalid(format!("unknown gait {gait_name}")))?;
    let speed = body_velocity(stride, frequency, gait.duty_factor())?;
    let mut events = vec![TimedEvent { t: 0.0, event: Event::Frequency { hz: frequency } }];
    for e in &script.events {
        let mut e = e.clone();
        match &mut e.event {
            Event::Velocity { velocity } if velocity.x != 0.0 || velocity.y != 0.0 => {
                let s = speed / velocity.x.hypot(velocity.y);
                *velocity = velocity.scaled(s);
            }
            Event::Frequency { .. } => continue,
            _ => {}
        }
        events.push(e);
    }
    Ok((Script { events, sweep: None }, speed))
}

/// One run per frequency, in parallel. Rows come back in frequency order.
pub fn run_sweep(robot: &RobotSpec, gaits: &[GaitSpec], walkspace: &Walkspace, script: &Script, opts: &RunOptions) -> Result<Vec<SweepRow>, OpsError> {
    let spec = script.sweep.as_ref().ok_or_else(|| OpsError::Invalid("script has no sweep directive".into()))?;
    std::thread::scope(|s| {
        let handles: Vec<_> = spec
            .frequencies
            .iter()
            .map(|&f| {
                s.spawn(move || -> Result<SweepRow, OpsError> {
                    let (variant, velocity) = sweep_variant(robot, gaits, script, f, spec.stride)?;
                    let r = run_script(robot, gaits, walkspace, &variant, opts)?;
                    let cot = r.summary.cot.ok_or_else(|| OpsError::Invalid(format!("no distance covered at {f} Hz")))?;
                    Ok(SweepRow {
                        frequency: f,
                        stride: spec.stride,
                        velocity,
                        distance: r.summary.distance,
                        mean_power: r.summary.mean_power,
                        cot,
                        clamped_ticks: r.summary.clamped_ticks,
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    })
}

/// Interior minimum test: first differences change sign exactly once, from
/// negative to positive.
pub fn has_interior_minimum(values: &[f64]) -> bool {
    let signs: Vec<bool> = values.windows(2).map(|w| w[1] > w[0]).collect();
    let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
    changes == 1 && !signs[0] && *signs.last().unwrap()
}

/// Mean power over the records plus cost of transport, for windows that moved.
pub fn energy_summary(records: &[EnergyRecord], mass: f64) -> (f64, Option<f64>) {
    let mean = records.iter().map(|r| r.power).sum::<f64>() / records.len().max(1) as f64;
    (mean, cost_of_transport(records, mass).ok())
}

/// Leg workspaces for a robot, cached on disk under the spec digest and
/// search parameters. Returns whether the cache was hit.
pub fn cached_workspaces(robot: &RobotSpec, search: &SearchParams, cache_dir: Option<&Path>) -> Result<(Vec<WorkspacePolyhedron>, bool), OpsError> {
    let key = {
        use sha2::{Digest, Sha256};
        let params = serde_json::to_string(search).expect("search params serialise");
        let h = Sha256::digest(format!("{}|{params}", robot_spec_digest(robot)).as_bytes());
        hex::encode(&h[..16])
    };
    let path = cache_dir.map(|d| d.join(format!("workspace-{key}.json")));
    if let Some(p) = &path {
        if let Ok(text) = std::fs::read_to_string(p) {
            if let Ok(ws) = serde_json::from_str(&text) {
                return Ok((ws, true));
            }
        }
    }
    let ws = generate_all(robot, search)?;
    if let Some(p) = &path {
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(io(dir))?;
        }
        std::fs::write(p, serde_json::to_string(&ws).expect("workspaces serialise")).map_err(io(p))?;
    }
    Ok((ws, false))
}

/// Workspaces and the walkspace at the default body height.
pub fn prepare_walkspace(robot: &RobotSpec, search: &SearchParams, cache_dir: Option<&Path>) -> Result<(Vec<WorkspacePolyhedron>, Walkspace), OpsError> {
    let (ws, _) = cached_workspaces(robot, search, cache_dir)?;
    let walk = derive_walkspace(&ws, 0.0)?;
    Ok((ws, walk))
}
