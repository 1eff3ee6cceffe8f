//! Timed command scripts.
//!
//! ```text
//! # comment
//! t=0    start
//! t=3    velocity 0.4 0 0
//! t=33   velocity 0 0 0
//! t=35   end
//! sweep frequency 0.25 0.5 1 1.25 2 stride 0.08
//! ```

use crate::posectrl::PoseMode;
use crate::robotctrl::{LegTarget, ModeRequest};
use crate::workspace::PlanarVelocity;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {message}")]
pub struct ScriptError {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Mode { request: ModeRequest },
    Velocity { velocity: PlanarVelocity },
    PoseVelocity { rates: [f64; 6] },
    PoseMode { mode: PoseMode },
    Inclination { on: bool },
    Gait { name: String },
    Frequency { hz: f64 },
    Legipulate { id: u8, target: LegTarget },
    /// Start (true) or stop collecting cost-of-transport samples.
    Measure { on: bool },
    End,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    /// s.
    pub t: f64,
    pub event: Event,
}

/// Repeats the script once per step frequency, rescaling every non-zero
/// velocity command to keep the stride length fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub frequencies: Vec<f64>,
    /// m.
    pub stride: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    /// Sorted by time; ties keep file order.
    pub events: Vec<TimedEvent>,
    pub sweep: Option<SweepSpec>,
}

impl Script {
    /// Time of the `end` event, else of the last event.
    pub fn duration(&self) -> f64 {
        self.events
            .iter()
            .find(|e| e.event == Event::End)
            .or(self.events.last())
            .map_or(0.0, |e| e.t)
    }
}

fn nums<const N: usize>(args: &[&str]) -> Result<[f64; N], String> {
    if args.len() != N {
        return Err(format!("expected {N} numbers, got {}", args.len()));
    }
    let mut out = [0.0f64; N];
    for (o, a) in out.iter_mut().zip(args) {
        *o = a.parse().map_err(|_| format!("not a number: {a}"))?;
        if !o.is_finite() {
            return Err(format!("not finite: {a}"));
        }
    }
    Ok(out)
}

fn on_off(args: &[&str]) -> Result<bool, String> {
    match args {
        ["on"] => Ok(true),
        ["off"] => Ok(false),
        _ => Err("expected on|off".into()),
    }
}

fn parse_event(name: &str, args: &[&str]) -> Result<Event, String> {
    Ok(match name {
        "start" => Event::Mode { request: ModeRequest::Start },
        "pack" => Event::Mode { request: ModeRequest::Pack },
        "velocity" => {
            let [x, y, yaw] = nums(args)?;
            Event::Velocity { velocity: PlanarVelocity::new(x, y, yaw) }
        }
        "pose_velocity" => Event::PoseVelocity { rates: nums(args)? },
        "pose_mode" => Event::PoseMode {
            mode: match args {
                ["off"] => PoseMode::Off,
                ["imu"] => PoseMode::Imu,
                ["auto"] => PoseMode::Auto,
                _ => return Err("expected off|imu|auto".into()),
            },
        },
        "inclination" => Event::Inclination { on: on_off(args)? },
        "gait" => match args {
            [g] => Event::Gait { name: g.to_string() },
            _ => return Err("expected a gait name".into()),
        },
        "frequency" => {
            let [hz] = nums(args)?;
            if hz <= 0.0 {
                return Err("frequency must be > 0".into());
            }
            Event::Frequency { hz }
        }
        "legipulate" => {
            let (id, rest) = args.split_first().ok_or("expected a leg id")?;
            let id: u8 = id.parse().map_err(|_| format!("bad leg id: {id}"))?;
            let target = match rest.split_first() {
                Some((&"velocity", v)) => LegTarget::Velocity { v: nums(v)? },
                Some((&"position", p)) => LegTarget::Position { p: nums(p)? },
                Some((&"release", [])) => LegTarget::Release,
                _ => return Err("expected velocity x y z | position x y z | release".into()),
            };
            Event::Legipulate { id, target }
        }
        "measure" => Event::Measure { on: on_off(args)? },
        "end" if args.is_empty() => Event::End,
        _ => return Err(format!("unknown event `{name}`")),
    })
}

fn parse_sweep(args: &[&str]) -> Result<SweepSpec, String> {
    let mut frequencies = Vec::new();
    let mut stride = None;
    let mut key = "";
    for a in args {
        match *a {
            "frequency" | "stride" => key = a,
            v => {
                let x: f64 = v.parse().map_err(|_| format!("not a number: {v}"))?;
                if !(x > 0.0 && x.is_finite()) {
                    return Err(format!("{key} must be > 0"));
                }
                match key {
                    "frequency" => frequencies.push(x),
                    "stride" if stride.is_none() => stride = Some(x),
                    _ => return Err(format!("unexpected `{v}`")),
                }
            }
        }
    }
    if frequencies.is_empty() {
        return Err("sweep needs at least one frequency".into());
    }
    Ok(SweepSpec {
        frequencies,
        stride: stride.ok_or("sweep needs a stride")?,
    })
}

pub fn parse_script(text: &str) -> Result<Script, ScriptError> {
    let mut script = Script::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| ScriptError { line, message };
        let body = raw.split('#').next().unwrap().trim();
        if body.is_empty() {
            continue;
        }
        let words: Vec<&str> = body.split_whitespace().collect();
        if words[0] == "sweep" {
            if script.sweep.is_some() {
                return Err(err("duplicate sweep directive".into()));
            }
            script.sweep = Some(parse_sweep(&words[1..]).map_err(err)?);
            continue;
        }
        let t = words[0]
            .strip_prefix("t=")
            .ok_or_else(|| err(format!("expected t=<sec>, got `{}`", words[0])))?;
        let t: f64 = t.parse().map_err(|_| err(format!("bad time `{t}`")))?;
        if !(t >= 0.0 && t.is_finite()) {
            return Err(err(format!("time must be >= 0, got {t}")));
        }
        let name = words.get(1).ok_or_else(|| err("missing event".into()))?;
        let event = parse_event(name, &words[2..]).map_err(err)?;
        script.events.push(TimedEvent { t, event });
    }
    script.events.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(script)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_event() {
        let s = parse_script(
            "# cruise\n\
             t=0 start\n\
             t=2.5 velocity 0.4 0 0.1 # forward\n\
             t=1 gait wave\n\
             t=1 frequency 0.5\n\
             t=3 pose_velocity 0 0 0 0.1 0 0\n\
             t=3 pose_mode imu\n\
             t=3 inclination on\n\
             t=4 legipulate 2 velocity 0 0 0.05\n\
             t=4 legipulate 2 position 0.1 0.2 -0.1\n\
             t=5 legipulate 2 release\n\
             t=5 measure on\n\
             t=6 pack\n\
             t=9 end\n\
             sweep frequency 0.5 1 stride 0.08\n",
        )
        .unwrap();
        assert_eq!(s.events.len(), 13);
        assert_eq!(s.events[1].event, Event::Gait { name: "wave".into() });
        assert_eq!(s.duration(), 9.0);
        assert_eq!(s.sweep, Some(SweepSpec { frequencies: vec![0.5, 1.0], stride: 0.08 }));
        assert!(matches!(s.events[3].event, Event::Velocity { velocity } if velocity == PlanarVelocity::new(0.4, 0.0, 0.1)));
    }

    #[test]
    fn empty_script_is_valid() {
        let s = parse_script("\n# nothing\n").unwrap();
        assert!(s.events.is_empty());
        assert_eq!(s.duration(), 0.0);
    }

    #[test]
    fn errors_name_the_line() {
        for (text, line) in [
            ("t=0 start\nt=1 fly\n", 2),
            ("velocity 1 0 0\n", 1),
            ("t=0 velocity 1 0\n", 1),
            ("t=0 velocity 1 NaN 0\n", 1),
            ("t=-1 start\n", 1),
            ("\n\nt=0 legipulate 1 spin\n", 3),
            ("sweep stride 0.1\n", 1),
        ] {
            assert_eq!(parse_script(text).unwrap_err().line, line, "{text}");
        }
    }
}
