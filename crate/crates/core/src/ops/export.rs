//! CSV exports. Every function is deterministic in its inputs.

use super::{LogRow, OpsError, SweepRow};
use crate::model::{GaitSpec, RobotSpec};
use crate::sim::EnergyRecord;
use crate::walkctrl::{gait_timing, LegPhase, WalkController};
use crate::workspace::{PlanarVelocity, Walkspace, WorkspacePolyhedron};
use std::f64::consts::TAU;

fn writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
}

fn row(w: &mut csv::Writer<Vec<u8>>, fields: impl IntoIterator<Item = String>) {
    w.write_record(fields.into_iter().collect::<Vec<_>>()).expect("in-memory writer");
}

fn joint_columns(robot: &RobotSpec, prefix: &str) -> Vec<String> {
    robot
        .legs
        .iter()
        .flat_map(|l| l.joints.iter().map(move |j| format!("{prefix}_{}_{}", l.id, j.spec.name)))
        .collect()
}

pub fn run_log_csv(robot: &RobotSpec, rows: &[LogRow]) -> String {
    let mut w = writer();
    let mut head: Vec<String> = ["tick", "time", "mode", "x", "y", "z", "roll", "pitch", "yaw"].map(String::from).to_vec();
    head.extend(joint_columns(robot, "q"));
    head.extend(joint_columns(robot, "tau"));
    head.extend(["power", "cot"].map(String::from));
    row(&mut w, head);
    for r in rows {
        let mut f = vec![r.tick.to_string(), r.time.to_string(), serde_json::to_value(r.mode).unwrap().as_str().unwrap().to_string()];
        f.extend(r.position.iter().chain(&r.rpy).chain(&r.q).chain(&r.torque).map(|x| x.to_string()));
        f.push(r.power.to_string());
        f.push(r.cot.map_or(String::new(), |c| c.to_string()));
        row(&mut w, f);
    }
    finish(w)
}

pub fn energy_csv(records: &[EnergyRecord]) -> String {
    let mut w = writer();
    for r in records {
        w.serialize(r).expect("in-memory writer");
    }
    if records.is_empty() {
        row(&mut w, ["time", "voltage", "current", "power", "velocity", "distance"].map(String::from));
    }
    finish(w)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = writer();
    for r in rows {
        w.serialize(r).expect("in-memory writer");
    }
    finish(w)
}

/// One row per slice vertex, body frame.
pub fn polyhedron_csv(ws: &WorkspacePolyhedron) -> String {
    let mut w = writer();
    row(&mut w, ["leg", "height", "bearing", "radius", "x", "y", "z"].map(String::from));
    let [ox, oy, oz] = ws.origin;
    for s in &ws.slices {
        let n = s.radii.len();
        for (k, r) in s.radii.iter().enumerate() {
            let a = k as f64 * TAU / n as f64;
            row(
                &mut w,
                [ws.leg_id as f64, s.height, a, *r, ox + r * a.cos(), oy + r * a.sin(), oz + s.height].map(|x| x.to_string()),
            );
        }
    }
    finish(w)
}

/// Polygon around one leg's default tip, closed (first vertex repeated).
pub fn walkspace_csv(walkspace: &Walkspace, centre: [f64; 2]) -> String {
    let mut w = writer();
    row(&mut w, ["bearing", "radius", "x", "y"].map(String::from));
    let n = walkspace.radii.len();
    for k in 0..=n {
        let a = (k % n) as f64 * walkspace.bearing_step();
        let r = walkspace.radii[k % n];
        row(&mut w, [a, r, centre[0] + r * a.cos(), centre[1] + r * a.sin()].map(|x| x.to_string()));
    }
    finish(w)
}

/// Tip paths (default body frame) while walking at a constant velocity,
/// after `warmup` periods and for `periods` gait periods.
pub fn trajectory_csv(robot: &RobotSpec, gait: &GaitSpec, velocity: PlanarVelocity, tick_rate: f64, warmup: u32, periods: u32) -> Result<String, OpsError> {
    let mut walk = WalkController::new(robot, gait.clone(), tick_rate).map_err(crate::robotctrl::ControlError::from)?;
    let period = walk.clock().period_ticks();
    let mut w = writer();
    row(&mut w, ["tick", "time", "leg", "phase", "progress", "x", "y", "z"].map(String::from));
    for k in 0..period * u64::from(warmup + periods) {
        let out = walk.tick(&velocity).map_err(crate::robotctrl::ControlError::from)?;
        if k < period * u64::from(warmup) {
            continue;
        }
        for (leg, l) in robot.legs.iter().zip(&out.legs) {
            let phase = if l.phase == LegPhase::Stance { "stance" } else { "swing" };
            row(
                &mut w,
                [
                    k.to_string(),
                    (k as f64 / tick_rate).to_string(),
                    leg.id.to_string(),
                    phase.to_string(),
                    l.progress.to_string(),
                    l.tip[0].to_string(),
                    l.tip[1].to_string(),
                    l.tip[2].to_string(),
                ],
            );
        }
    }
    Ok(finish(w))
}

/// Gantt-style timing over `periods` periods in phase units: 1 = stance, 0 = swing.
pub fn gait_timing_csv(robot: &RobotSpec, gait: &GaitSpec, periods: u32) -> Result<String, OpsError> {
    let mut w = writer();
    let mut head = vec!["phase".to_string()];
    head.extend(robot.legs.iter().map(|l| format!("leg_{}", l.id)));
    row(&mut w, head);
    for t in 0..u64::from(gait.period() * periods) {
        let mut f = vec![t.to_string()];
        for i in 0..robot.leg_count() {
            let (p, _) = gait_timing(gait, t, i).map_err(crate::robotctrl::ControlError::from)?;
            f.push(u8::from(p == LegPhase::Stance).to_string());
        }
        row(&mut w, f);
    }
    Ok(finish(w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_gait_library, load_robot_spec};

    #[test]
    fn gait_timing_rows() {
        let r = load_robot_spec(include_str!("../../../../configs/hexapod.toml")).unwrap();
        let g = default_gait_library().into_iter().find(|g| g.name == "tripod").unwrap();
        let text = gait_timing_csv(&r, &g, 1).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "phase,leg_1,leg_2,leg_3,leg_4,leg_5,leg_6");
        assert_eq!(lines.len() as u32, 1 + g.period());
        for l in &lines[1..] {
            let stance: u32 = l.split(',').skip(1).map(|x| x.parse::<u32>().unwrap()).sum();
            assert_eq!(stance, 3);
        }
    }

    #[test]
    fn walkspace_polygon_is_closed() {
        let ws = Walkspace { height: 0.0, radii: vec![0.1; 8] };
        let text = walkspace_csv(&ws, [1.0, 2.0]);
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 10);
        assert_eq!(lines[1].split(',').skip(2).collect::<Vec<_>>(), lines[9].split(',').skip(2).collect::<Vec<_>>());
    }

    #[test]
    fn energy_header_without_records() {
        assert_eq!(energy_csv(&[]).trim(), "time,voltage,current,power,velocity,distance");
        let r = EnergyRecord { time: 1.0, voltage: 25.0, current: 2.0, power: 50.0, velocity: 0.1, distance: 0.1 };
        assert!(energy_csv(&[r]).starts_with("time,voltage,current,power,velocity,distance\n1.0,25.0,2.0,50.0,0.1,0.1"));
    }
}
