//! Wire format. Every message is one JSON text frame carrying `proto` and a
//! `type` tag. Units: metres, radians, seconds, watts.

use crate::model::Pose;
use crate::ops::Event;
use crate::posectrl::PoseMode;
use crate::robotctrl::{LegSnapshot, LegTarget, ModeRequest, PoseSnapshot, RobotMode};
use crate::walkctrl::WalkState;
use crate::workspace::PlanarVelocity;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const PROTO_VERSION: u32 = 1;

/// Client → server command payloads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    /// Twist, m/s and rad/s. Walking uses linear x, y and angular z only.
    Velocity { linear: [f64; 3], angular: [f64; 3] },
    /// Body pose rates; all six components are used.
    PoseVelocity { linear: [f64; 3], angular: [f64; 3] },
    GaitSelect { gait: String },
    Mode { mode: ModeRequest },
    Legipulate { leg: u8, target: LegTarget },
    Params {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step_frequency: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pose_mode: Option<PoseMode>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inclination: Option<bool>,
    },
}

pub const COMMAND_TYPES: [&str; 6] = ["velocity", "pose_velocity", "gait_select", "mode", "legipulate", "params"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandMessage {
    pub proto: u32,
    /// Strictly increasing per session.
    pub seq: u64,
    #[serde(flatten)]
    pub command: Command,
}

impl Command {
    fn numbers(&self) -> Vec<f64> {
        match self {
            Command::Velocity { linear, angular } | Command::PoseVelocity { linear, angular } => linear.iter().chain(angular).copied().collect(),
            Command::Legipulate { target: LegTarget::Velocity { v: x } | LegTarget::Position { p: x }, .. } => x.to_vec(),
            Command::Params { step_frequency: Some(f), .. } => vec![*f],
            _ => vec![],
        }
    }

    /// Controller events for this command.
    pub fn events(&self) -> Vec<Event> {
        match self {
            Command::Velocity { linear, angular } => vec![Event::Velocity {
                velocity: PlanarVelocity::new(linear[0], linear[1], angular[2]),
            }],
            Command::PoseVelocity { linear, angular } => vec![Event::PoseVelocity {
                rates: [linear[0], linear[1], linear[2], angular[0], angular[1], angular[2]],
            }],
            Command::GaitSelect { gait } => vec![Event::Gait { name: gait.clone() }],
            Command::Mode { mode } => vec![Event::Mode { request: *mode }],
            Command::Legipulate { leg, target } => vec![Event::Legipulate { id: *leg, target: *target }],
            Command::Params { step_frequency, pose_mode, inclination } => {
                let mut e = Vec::new();
                if let Some(hz) = step_frequency {
                    e.push(Event::Frequency { hz: *hz });
                }
                if let Some(mode) = pose_mode {
                    e.push(Event::PoseMode { mode: *mode });
                }
                if let Some(on) = inclination {
                    e.push(Event::Inclination { on: *on });
                }
                e
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Parse,
    ProtoVersion,
    UnknownType,
    NonFinite,
    StaleSeq,
    /// Command mailbox full; the command was dropped.
    Busy,
    /// Valid command the controller refused in its current mode.
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtoError {
    pub seq: Option<u64>,
    pub code: ErrorCode,
    pub message: String,
}

/// Per-connection validation state.
#[derive(Clone, Debug, Default)]
pub struct Session {
    pub id: u64,
    last_seq: Option<u64>,
}

impl Session {
    pub fn new(id: u64) -> Self {
        Self { id, last_seq: None }
    }

    pub fn last_seq(&self) -> Option<u64> {
        self.last_seq
    }

    /// Parses and validates then commits one frame.
    pub fn accept(&mut self, text: &str) -> Result<CommandMessage, ProtoError> {
        let msg = self.validate(text)?;
        self.commit(msg.seq);
        Ok(msg)
    }

    /// Marks `seq` as used. Callers commit only once the command has been
    /// applied, so busy or rejected frames can be resent unchanged.
    pub fn commit(&mut self, seq: u64) {
        self.last_seq = Some(seq);
    }

    /// Parses and validates one frame without touching the session.
    pub fn validate(&self, text: &str) -> Result<CommandMessage, ProtoError> {
        let err = |seq, code, message: String| ProtoError { seq, code, message };
        let v: Value = serde_json::from_str(text).map_err(|e| err(None, ErrorCode::Parse, e.to_string()))?;
        let seq = v.get("seq").and_then(Value::as_u64);
        match v.get("proto").and_then(Value::as_u64) {
            Some(p) if p == u64::from(PROTO_VERSION) => {}
            other => return Err(err(seq, ErrorCode::ProtoVersion, format!("expected proto {PROTO_VERSION}, got {other:?}"))),
        }
        match v.get("type").and_then(Value::as_str) {
            Some(t) if COMMAND_TYPES.contains(&t) => {}
            Some(t) => return Err(err(seq, ErrorCode::UnknownType, format!("unknown type `{t}`"))),
            None => return Err(err(seq, ErrorCode::UnknownType, "missing type".into())),
        }
        let msg: CommandMessage = serde_json::from_value(v).map_err(|e| err(seq, ErrorCode::Parse, e.to_string()))?;
        if msg.command.numbers().iter().any(|x| !x.is_finite()) {
            return Err(err(seq, ErrorCode::NonFinite, "non-finite value".into()));
        }
        if let Some(last) = self.last_seq {
            if msg.seq <= last {
                return Err(err(seq, ErrorCode::StaleSeq, format!("seq {} not after {last}", msg.seq)));
            }
        }
        Ok(msg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegSummary {
    pub id: u8,
    pub base: Pose,
    pub default_tip: [f64; 3],
    pub joints: Vec<String>,
    /// Walkspace polygon around this leg's default tip, body frame xy.
    pub walkspace: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotSummary {
    pub name: String,
    /// kg.
    pub mass: f64,
    pub body_clearance: f64,
    pub legs: Vec<LegSummary>,
}

/// Static payload sent once on connect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub proto: u32,
    pub session: u64,
    pub robot: RobotSummary,
    pub gaits: Vec<String>,
    /// Hz.
    pub tick_rate: f64,
    /// Hz.
    pub stream_rate: f64,
    /// s.
    pub deadman_timeout: f64,
    /// Walkspace-limited speed along each axis at the current step frequency.
    pub max_velocity: PlanarVelocity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    /// Simulated world pose.
    pub world: Pose,
    /// Controller body pose and its contributing sub-poses.
    pub poses: PoseSnapshot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// W.
    pub power: f64,
    /// Over the rolling window; absent while the body has not moved.
    pub cot: Option<f64>,
    pub velocity_target: PlanarVelocity,
    pub velocity_commanded: PlanarVelocity,
    /// Measured in the simulator over the last second, body frame.
    pub velocity_achieved: PlanarVelocity,
    /// Cumulative path length, m.
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub proto: u32,
    pub tick: u64,
    /// s.
    pub time: f64,
    pub mode: RobotMode,
    pub walk_state: WalkState,
    pub gait: String,
    pub step_frequency: f64,
    pub body: BodyState,
    pub legs: Vec<LegSnapshot>,
    pub metrics: Metrics,
    /// Velocity was zeroed because commands stopped arriving.
    pub dead_man: bool,
}

/// Server → client frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello(Hello),
    State(StateMessage),
    /// Command applied; ticks are controller ticks at receipt and at application.
    Ack { proto: u32, seq: u64, tick_received: u64, tick_applied: u64 },
    Error { proto: u32, session: u64, #[serde(flatten)] error: ProtoError },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialise")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn velocity_command_accepted() {
        let mut s = Session::new(1);
        let m = s.accept(r#"{"proto":1,"seq":1,"type":"velocity","linear":[0.2,0,0.5],"angular":[0.1,0.1,0.3]}"#).unwrap();
        // out-of-plane components are dropped for walking
        assert_eq!(m.command.events(), vec![Event::Velocity { velocity: PlanarVelocity::new(0.2, 0.0, 0.3) }]);
        assert_eq!(s.last_seq(), Some(1));
    }

    #[test]
    fn errors_leave_session_unchanged() {
        let mut s = Session::new(1);
        s.accept(r#"{"proto":1,"seq":5,"type":"gait_select","gait":"wave"}"#).unwrap();
        for (text, code) in [
            ("not json", ErrorCode::Parse),
            (r#"{"proto":2,"seq":6,"type":"velocity","linear":[0,0,0],"angular":[0,0,0]}"#, ErrorCode::ProtoVersion),
            (r#"{"proto":1,"seq":6,"type":"fly"}"#, ErrorCode::UnknownType),
            (r#"{"proto":1,"seq":6,"type":"velocity","linear":[0,0],"angular":[0,0,0]}"#, ErrorCode::Parse),
            (r#"{"proto":1,"seq":6,"type":"velocity","linear":[NaN,0,0],"angular":[0,0,0]}"#, ErrorCode::Parse),
            (r#"{"proto":1,"seq":6,"type":"velocity","linear":[1e999,0,0],"angular":[0,0,0]}"#, ErrorCode::Parse),
            (r#"{"proto":1,"seq":5,"type":"mode","mode":"start"}"#, ErrorCode::StaleSeq),
            (r#"{"proto":1,"seq":6,"type":"mode","mode":"start","extra":1}"#, ErrorCode::Parse),
        ] {
            assert_eq!(s.accept(text).unwrap_err().code, code, "{text}");
            assert_eq!(s.last_seq(), Some(5));
        }
        assert!(s.accept(r#"{"proto":1,"seq":6,"type":"mode","mode":"pack"}"#).is_ok());
    }

    #[test]
    fn non_finite_values_are_caught_after_parsing() {
        let c = Command::Velocity { linear: [f64::NAN, 0.0, 0.0], angular: [0.0; 3] };
        assert!(c.numbers().iter().any(|x| !x.is_finite()));
    }

    #[test]
    fn params_map_to_events() {
        let mut s = Session::new(1);
        let m = s.accept(r#"{"proto":1,"seq":1,"type":"params","step_frequency":1.5,"pose_mode":"imu"}"#).unwrap();
        assert_eq!(m.command.events(), vec![Event::Frequency { hz: 1.5 }, Event::PoseMode { mode: PoseMode::Imu }]);
        let m = s.accept(r#"{"proto":1,"seq":2,"type":"legipulate","leg":3,"target":{"kind":"velocity","v":[0,0,0.05]}}"#).unwrap();
        assert_eq!(m.command.events(), vec![Event::Legipulate { id: 3, target: LegTarget::Velocity { v: [0.0, 0.0, 0.05] } }]);
    }

    #[test]
    fn command_round_trip() {
        let m = CommandMessage { proto: 1, seq: 9, command: Command::PoseVelocity { linear: [0.0, 0.1, 0.0], angular: [0.0, 0.0, 0.2] } };
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(text, r#"{"proto":1,"seq":9,"type":"pose_velocity","linear":[0.0,0.1,0.0],"angular":[0.0,0.0,0.2]}"#);
        assert_eq!(Session::new(0).accept(&text).unwrap(), m);
    }
}
