//! Per-tick orchestration: velocity limiting, walk and pose generation,
//! admittance, IK and joint command limiting, behind a mode state machine.
//!
//! Modes: `Packed → Starting → Ready ⇄ Walking / Legipulation → Stopping → Packed`.
//! Sequences only start from a stopped walk with every leg in stance.

mod leg;

pub use leg::{joint_command, tip_force_estimate, AdmittanceState, JointCommand, TipWrench, TouchdownDetector};

use crate::kinematics::{IkOptions, Transform};
use crate::model::{GaitSpec, Pose, RobotSpec};
use crate::posectrl::{plan_sequence, Pose6, PoseController, PoseError, PoseInputs, PoseMode, SequencePlayer};
use crate::walkctrl::{LegPhase, WalkController, WalkError, WalkState};
use crate::workspace::{default_stance, default_tips_xy, limit_velocity, remaining_stance_scale, stance_axis, tip_target, PlanarVelocity, Walkspace, WorkspaceError};
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("unknown gait `{0}`")]
    UnknownGait(String),
    #[error("unknown leg id {0}")]
    UnknownLeg(u8),
    #[error("{0}")]
    Rejected(String),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Pose(#[from] PoseError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotMode {
    Packed,
    Starting,
    Ready,
    Walking,
    Legipulation,
    Stopping,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeRequest {
    /// Run the startup sequence from the packed pose.
    Start,
    /// Stop walking, then run the shutdown sequence.
    Pack,
}

/// Operator command for one leg's tip, in the default body frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LegTarget {
    /// m/s.
    Velocity { v: [f64; 3] },
    Position { p: [f64; 3] },
    /// Hand the leg back to the gait.
    Release,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sensors {
    /// Body roll/pitch relative to gravity, rad.
    pub imu: Option<[f64; 2]>,
    /// Joint load torques per leg, N·m.
    pub torques: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegSnapshot {
    pub id: u8,
    /// rad.
    pub q: Vec<f64>,
    /// rad/s.
    pub qd: Vec<f64>,
    /// Commanded tip in the body frame, m.
    pub tip: [f64; 3],
    pub phase: LegPhase,
    pub progress: f64,
    pub manual: bool,
    pub velocity_clamped: bool,
    pub contact: bool,
    /// Vertical tip force estimate in the body frame, N.
    pub force_z: f64,
    /// Admittance offset, m; x and y are always zero.
    pub admittance: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSnapshot {
    pub body: Pose,
    pub walk: Pose,
    pub manual: Pose,
    pub inclination: Pose,
    pub imu_auto: Pose,
    pub tip_align: Pose,
    pub mode: PoseMode,
    pub limited: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerSnapshot {
    pub tick: u64,
    /// s.
    pub time: f64,
    pub mode: RobotMode,
    pub walk_state: WalkState,
    pub gait: String,
    /// Hz, as realised by the tick clock.
    pub step_frequency: f64,
    pub velocity_target: PlanarVelocity,
    /// After the walkspace limit.
    pub velocity_limited: PlanarVelocity,
    /// After acceleration ramping.
    pub velocity_commanded: PlanarVelocity,
    pub pose: PoseSnapshot,
    pub legs: Vec<LegSnapshot>,
    pub force_damped: bool,
    pub sequence_progress: Option<f64>,
}

/// Clamp events are counted as ticks with at least one clamped joint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClampStats {
    pub ticks: u64,
    pub joints: u64,
}

#[derive(Clone, Debug)]
pub struct RobotController {
    robot: RobotSpec,
    gaits: Vec<GaitSpec>,
    walkspace: Walkspace,
    tips_xy: Vec<Vector2<f64>>,
    dt: f64,
    tick: u64,
    mode: RobotMode,
    walk: WalkController,
    pose: PoseController,
    ik: IkOptions,
    q: Vec<Vec<f64>>,
    qd: Vec<Vec<f64>>,
    q_stance: Vec<Vec<f64>>,
    axes: Vec<Option<Vector3<f64>>>,
    admittance: Vec<AdmittanceState>,
    touchdown: Vec<TouchdownDetector>,
    force_z: Vec<f64>,
    clamped: Vec<bool>,
    stats: ClampStats,
    sequence: Option<SequencePlayer>,
    pending_pack: bool,
    target: PlanarVelocity,
    limited: PlanarVelocity,
    pose_velocity: Pose6,
    force_damped: bool,
    lowered_this_cycle: bool,
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl RobotController {
    /// Controller in the packed pose.
    pub fn new(robot: &RobotSpec, gaits: &[GaitSpec], walkspace: Walkspace, tick_rate: f64) -> Result<Self, ControlError> {
        let name = &robot.walk.default_gait;
        let gait = gaits.iter().find(|g| &g.name == name).cloned().ok_or_else(|| ControlError::UnknownGait(name.clone()))?;
        let walk = WalkController::new(robot, gait, tick_rate)?;
        let ik = IkOptions::from_spec(robot);
        let q_stance = robot.legs.iter().map(|l| default_stance(l, &ik)).collect::<Result<Vec<_>, _>>()?;
        let axes = robot.legs.iter().zip(&q_stance).map(|(l, q)| stance_axis(l, q)).collect();
        let n = robot.leg_count();
        Ok(Self {
            robot: robot.clone(),
            gaits: gaits.to_vec(),
            walkspace,
            tips_xy: default_tips_xy(robot),
            dt: 1.0 / tick_rate,
            tick: 0,
            mode: RobotMode::Packed,
            walk,
            pose: PoseController::new(robot),
            ik,
            q: robot.legs.iter().map(|l| l.packed_angles()).collect(),
            qd: robot.legs.iter().map(|l| vec![0.0; l.joint_count()]).collect(),
            q_stance,
            axes,
            admittance: vec![AdmittanceState::default(); n],
            touchdown: vec![TouchdownDetector::default(); n],
            force_z: vec![0.0; n],
            clamped: vec![false; n],
            stats: ClampStats::default(),
            sequence: None,
            pending_pack: false,
            target: PlanarVelocity::default(),
            limited: PlanarVelocity::default(),
            pose_velocity: [0.0; 6],
            force_damped: false,
            lowered_this_cycle: false,
        })
    }

    /// Controller already standing in its default stance.
    pub fn new_standing(robot: &RobotSpec, gaits: &[GaitSpec], walkspace: Walkspace, tick_rate: f64) -> Result<Self, ControlError> {
        let mut c = Self::new(robot, gaits, walkspace, tick_rate)?;
        c.q = c.q_stance.clone();
        c.mode = RobotMode::Ready;
        c.touchdown.iter_mut().for_each(|t| t.contact = true);
        Ok(c)
    }

    pub fn robot(&self) -> &RobotSpec {
        &self.robot
    }

    pub fn mode(&self) -> RobotMode {
        self.mode
    }

    pub fn walk(&self) -> &WalkController {
        &self.walk
    }

    pub fn pose(&self) -> &PoseController {
        &self.pose
    }

    pub fn walkspace(&self) -> &Walkspace {
        &self.walkspace
    }

    pub fn joint_positions(&self) -> &[Vec<f64>] {
        &self.q
    }

    pub fn joint_velocities(&self) -> &[Vec<f64>] {
        &self.qd
    }

    pub fn stance_angles(&self) -> &[Vec<f64>] {
        &self.q_stance
    }

    pub fn clamp_stats(&self) -> ClampStats {
        self.stats
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn target_velocity(&self) -> PlanarVelocity {
        self.target
    }

    /// Desired planar body velocity; held until replaced.
    pub fn set_velocity(&mut self, v: PlanarVelocity) -> Result<(), ControlError> {
        if !finite(&[v.x, v.y, v.yaw]) {
            return Err(ControlError::Walk(WalkError::NonFinite("velocity")));
        }
        self.target = v;
        Ok(())
    }

    /// Body pose rates (x, y, z m/s; roll, pitch, yaw rad/s).
    pub fn set_pose_velocity(&mut self, v: Pose6) -> Result<(), ControlError> {
        if !finite(&v) {
            return Err(ControlError::Walk(WalkError::NonFinite("pose velocity")));
        }
        self.pose_velocity = v;
        Ok(())
    }

    pub fn set_pose_mode(&mut self, mode: PoseMode) {
        self.pose.set_mode(mode);
    }

    pub fn set_inclination(&mut self, on: bool) {
        self.pose.set_inclination(on);
    }

    pub fn select_gait(&mut self, name: &str) -> Result<(), ControlError> {
        let g = self.gaits.iter().find(|g| g.name == name).cloned().ok_or_else(|| ControlError::UnknownGait(name.into()))?;
        self.walk.request_gait(g)?;
        Ok(())
    }

    pub fn set_step_frequency(&mut self, f: f64) -> Result<(), ControlError> {
        self.walk.request_step_frequency(f)?;
        Ok(())
    }

    pub fn request_mode(&mut self, req: ModeRequest) -> Result<(), ControlError> {
        match (req, self.mode) {
            (ModeRequest::Start, RobotMode::Packed) => {
                let kf = self.robot.sequence("startup").map(|s| s.keyframes.clone()).unwrap_or_default();
                self.sequence = Some(plan_sequence(&self.robot, &kf, &self.q, Some(&self.q_stance))?);
                self.mode = RobotMode::Starting;
                Ok(())
            }
            (ModeRequest::Start, _) => Ok(()),
            (ModeRequest::Pack, RobotMode::Packed | RobotMode::Stopping) => Ok(()),
            (ModeRequest::Pack, RobotMode::Starting) => Err(ControlError::Rejected("cannot pack while starting".into())),
            (ModeRequest::Pack, _) => {
                self.pending_pack = true;
                Ok(())
            }
        }
    }

    pub fn legipulate(&mut self, id: u8, target: LegTarget) -> Result<(), ControlError> {
        let i = self.robot.leg_index(id).ok_or(ControlError::UnknownLeg(id))?;
        let manual = self.walk.is_manual(i);
        match target {
            LegTarget::Release => {
                if manual {
                    self.walk.set_manual(i, false)?;
                }
                return Ok(());
            }
            LegTarget::Velocity { v } if !finite(&v) => return Err(ControlError::Walk(WalkError::NonFinite("tip velocity"))),
            LegTarget::Position { p } if !finite(&p) => return Err(ControlError::Walk(WalkError::NonFinite("tip position"))),
            _ => {}
        }
        if !manual {
            let ready = matches!(self.mode, RobotMode::Ready | RobotMode::Legipulation) && self.walk.state() == WalkState::Stopped;
            if !ready || self.pending_pack || !self.target.is_zero() {
                return Err(ControlError::Rejected("legipulation requires a standing, stopped robot".into()));
            }
            if !self.walk.set_manual(i, true)? {
                return Err(ControlError::Rejected(format!("leg {id} is not in stance")));
            }
        }
        match target {
            LegTarget::Velocity { v } => self.walk.manual_velocity(i, &Vector3::from(v))?,
            LegTarget::Position { p } => self.walk.manual_position(i, &Vector3::from(p))?,
            LegTarget::Release => {}
        }
        Ok(())
    }

    fn body_relative(&self) -> Transform {
        self.pose.relative()
    }

    fn run_sequence(&mut self) {
        let Some(seq) = self.sequence.as_mut() else { return };
        let targets = seq.step(self.dt).to_vec();
        let finished = seq.finished();
        for (i, leg) in self.robot.legs.iter().enumerate() {
            let mut clamped = false;
            for (k, j) in leg.joints.iter().enumerate() {
                let q0 = self.q[i][k];
                let step = j.spec.velocity_max * self.dt;
                let d = targets[i][k] - q0;
                // sequences are timed at exactly the limit; only flag real excess
                clamped |= d.abs() > step * (1.0 + 1e-9);
                let d = d.clamp(-step, step);
                let q1 = j.spec.clamp(q0 + d);
                self.qd[i][k] = (q1 - q0) / self.dt;
                self.q[i][k] = q1;
            }
            self.clamped[i] = clamped;
            if clamped {
                self.stats.joints += 1;
            }
        }
        if finished {
            self.sequence = None;
            self.mode = match self.mode {
                RobotMode::Starting => RobotMode::Ready,
                _ => RobotMode::Packed,
            };
            self.pose.reset_manual();
        }
    }

    /// One control tick.
    pub fn tick(&mut self, sensors: &Sensors) -> Result<ControllerSnapshot, ControlError> {
        self.force_damped = false;
        self.clamped.iter_mut().for_each(|c| *c = false);
        match self.mode {
            RobotMode::Packed => {
                self.qd.iter_mut().for_each(|v| v.iter_mut().for_each(|x| *x = 0.0));
            }
            RobotMode::Starting | RobotMode::Stopping => self.run_sequence(),
            _ => self.walk_tick(sensors)?,
        }
        if self.clamped.iter().any(|c| *c) {
            self.stats.ticks += 1;
        }
        self.tick += 1;
        Ok(self.snapshot())
    }

    fn walk_tick(&mut self, sensors: &Sensors) -> Result<(), ControlError> {
        let dt = self.dt;
        if self.pending_pack && self.walk.state() == WalkState::Stopped && !self.walk.any_manual() {
            let kf = self.robot.sequence("shutdown").map(|s| s.keyframes.clone()).unwrap_or_default();
            let packed: Vec<Vec<f64>> = self.robot.legs.iter().map(|l| l.packed_angles()).collect();
            self.sequence = Some(plan_sequence(&self.robot, &kf, &self.q, Some(&packed))?);
            self.pending_pack = false;
            self.target = PlanarVelocity::default();
            self.mode = RobotMode::Stopping;
            self.run_sequence();
            return Ok(());
        }
        let wanted = if self.pending_pack { PlanarVelocity::default() } else { self.target };
        let f = self.walk.effective_frequency();
        let beta = self.walk.duty_factor();
        self.limited = limit_velocity(&wanted, &self.walkspace, f, beta, &self.tips_xy);
        // feet already part-way through stance (walk start, gait change) must
        // not be carried past the walkspace before they lift
        let t_stance = self.walk.clock().stance_ticks() as f64 * dt;
        let tips = self.walk.tips();
        let mut scale: f64 = 1.0;
        for (i, d) in self.tips_xy.iter().enumerate() {
            let (phase, progress) = self.walk.leg_phase(i);
            if phase != LegPhase::Stance || self.walk.is_manual(i) {
                continue;
            }
            let tip = tips[i].xy();
            scale = scale.min(remaining_stance_scale(&self.limited, &self.walkspace, &tip, &(tip - d), (1.0 - progress) * t_stance));
        }
        if scale < 1.0 {
            self.limited = self.limited.scaled(scale);
        }
        let out = self.walk.tick(&self.limited)?;
        if out.cycle_start {
            self.lowered_this_cycle = false;
        }

        // tip forces, contact and admittance
        let adm = self.robot.admittance;
        for (i, leg) in self.robot.legs.iter().enumerate() {
            let stance = out.legs[i].phase == LegPhase::Stance;
            match &sensors.torques {
                Some(t) => {
                    let w = tip_force_estimate(leg, &self.q[i], &t[i], self.robot.ik_lambda);
                    self.force_damped |= w.damped;
                    self.force_z[i] = leg.base_transform().transform_vector(&w.force).z;
                    self.touchdown[i].update(self.force_z[i], &self.robot.touchdown);
                }
                None => {
                    self.force_z[i] = 0.0;
                    self.touchdown[i].contact = stance && !out.legs[i].manual;
                }
            }
            if adm.enabled {
                let f = if stance && self.touchdown[i].contact { self.force_z[i] } else { 0.0 };
                self.admittance[i].update(f, &adm, dt);
            }
        }

        // contact points in the ground frame of the current pose; swing-leg
        // inertia can look like contact, so only stance feet count
        let p_body = self.pose.state().p_body;
        let contacts: Vec<Vector3<f64>> = self
            .robot
            .legs
            .iter()
            .enumerate()
            .filter(|(i, _)| self.touchdown[*i].contact && out.legs[*i].phase == LegPhase::Stance)
            .map(|(i, leg)| p_body.transform_point(&crate::kinematics::tip_in_body(leg, &self.q[i])))
            .collect();
        let inputs = PoseInputs {
            pose_velocity: self.pose_velocity,
            imu: sensors.imu,
            contacts,
            gait_phase: self.walk.phase_fraction(),
        };
        self.pose.update(&inputs, dt);
        let rel_rot = self.body_relative().rotation();

        let mut any_clamped = false;
        for (i, leg) in self.robot.legs.iter().enumerate() {
            let tip_d = Vector3::from(out.legs[i].tip);
            let tip_b = self.pose.tip_in_body(&tip_d) + self.admittance[i].offset();
            let base = leg.base_transform();
            let axis = self.axes[i].map(|a| {
                // keep the last link's world direction under body rotation
                let a_body = base.transform_vector(&a);
                base.rotation().transpose() * (rel_rot.transpose() * a_body)
            });
            let target = tip_target(&base.inverse(), &tip_b, axis.as_ref());
            let cmd = joint_command(leg, &self.q[i], &target, &self.ik, dt);
            any_clamped |= cmd.velocity_clamped;
            self.q[i] = cmd.position;
            self.qd[i] = cmd.velocity;
            self.clamped[i] = cmd.velocity_clamped;
            if cmd.velocity_clamped {
                self.stats.joints += 1;
            }
        }
        if any_clamped && self.robot.walk.adaptive_step_frequency && !self.lowered_this_cycle && out.state == WalkState::Walking {
            self.walk.request_step_frequency(self.walk.step_frequency() * 0.9)?;
            self.lowered_this_cycle = true;
        }

        self.mode = if self.walk.any_manual() {
            RobotMode::Legipulation
        } else if self.walk.state() == WalkState::Walking {
            RobotMode::Walking
        } else {
            RobotMode::Ready
        };
        Ok(())
    }

    pub fn snapshot(&self) -> ControllerSnapshot {
        let st = self.pose.state();
        let walk_tips = self.walk.tips();
        let legs = self
            .robot
            .legs
            .iter()
            .enumerate()
            .map(|(i, leg)| {
                let standing = !matches!(self.mode, RobotMode::Packed | RobotMode::Starting | RobotMode::Stopping);
                let tip = if standing {
                    self.pose.tip_in_body(&walk_tips[i]) + self.admittance[i].offset()
                } else {
                    crate::kinematics::tip_in_body(leg, &self.q[i])
                };
                let wl = self.walk_leg(i);
                LegSnapshot {
                    id: leg.id,
                    q: self.q[i].clone(),
                    qd: self.qd[i].clone(),
                    tip: [tip.x, tip.y, tip.z],
                    phase: wl.0,
                    progress: wl.1,
                    manual: self.walk.is_manual(i),
                    velocity_clamped: self.clamped[i],
                    contact: self.touchdown[i].contact,
                    force_z: self.force_z[i],
                    admittance: self.admittance[i].offset().into(),
                }
            })
            .collect();
        ControllerSnapshot {
            tick: self.tick,
            time: self.tick as f64 * self.dt,
            mode: self.mode,
            walk_state: self.walk.state(),
            gait: self.walk.gait().name.clone(),
            step_frequency: self.walk.effective_frequency(),
            velocity_target: self.target,
            velocity_limited: self.limited,
            velocity_commanded: self.walk.velocity(),
            pose: PoseSnapshot {
                body: Pose::from_transform(&st.p_body),
                walk: Pose::from_transform(&st.p_walk),
                manual: Pose::from_transform(&st.h_man),
                inclination: Pose::from_transform(&st.h_inc),
                imu_auto: Pose::from_transform(&st.h_ai),
                tip_align: Pose::from_transform(&st.h_ali),
                mode: self.pose.mode(),
                limited: st.limited,
            },
            legs,
            force_damped: self.force_damped,
            sequence_progress: self.sequence.as_ref().map(|s| s.progress()),
        }
    }

    fn walk_leg(&self, i: usize) -> (LegPhase, f64) {
        self.walk.leg_phase(i)
    }
}
