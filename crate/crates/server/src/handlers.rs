//! Blocking implementations of the `/api` operations.

use hexgait_core::api::*;
use hexgait_core::model::{default_gait_library, load_gait_library, load_robot_spec, robot_spec_digest, GaitSpec, RobotSpec};
use hexgait_core::ops::export::{energy_csv, gait_timing_csv, polyhedron_csv, run_log_csv, sweep_csv, trajectory_csv, walkspace_csv};
use hexgait_core::ops::{cached_workspaces, has_interior_minimum, parse_script, prepare_walkspace, run_script, run_sweep, Event, OpsError, Script};
use hexgait_core::walkctrl::WalkController;
use std::path::Path;

#[derive(Debug)]
pub struct ApiError(pub ErrorBody);

impl ApiError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self(ErrorBody { kind: ErrorKind::Validation, message: message.into() })
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self(ErrorBody { kind: ErrorKind::Runtime, message: message.into() })
    }
}

impl From<OpsError> for ApiError {
    fn from(e: OpsError) -> Self {
        match e {
            OpsError::Script(_) | OpsError::Invalid(_) => Self::validation(e.to_string()),
            _ => Self::runtime(e.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn artifact(name: impl Into<String>, content: String) -> Artifact {
    Artifact { name: name.into(), content }
}

pub fn load_model(input: &ModelInput) -> ApiResult<(RobotSpec, Vec<GaitSpec>)> {
    let robot = load_robot_spec(&input.robot).map_err(|e| ApiError::validation(format!("robot: {e}")))?;
    let gaits = match &input.gaits {
        Some(text) => load_gait_library(text).map_err(|e| ApiError::validation(format!("gaits: {e}")))?,
        None => default_gait_library(),
    };
    Ok((robot, gaits))
}

fn find_gait<'a>(gaits: &'a [GaitSpec], name: &str) -> ApiResult<&'a GaitSpec> {
    gaits.iter().find(|g| g.name == name).ok_or_else(|| ApiError::validation(format!("unknown gait `{name}`")))
}

pub fn validate(input: &ModelInput) -> ApiResult<ValidateResponse> {
    let (robot, gaits) = load_model(input)?;
    // only gaits the walk controller accepts for this leg count
    let usable = gaits.iter().filter(|g| WalkController::new(&robot, (*g).clone(), 200.0).is_ok()).map(|g| g.name.clone()).collect();
    Ok(ValidateResponse {
        name: robot.name.clone(),
        digest: robot_spec_digest(&robot),
        mass: robot.mass,
        legs: robot.legs.iter().map(|l| l.joints.len()).collect(),
        gaits: usable,
    })
}

pub fn workspace(req: &WorkspaceRequest, cache: Option<&Path>) -> ApiResult<WorkspaceResponse> {
    let (robot, _) = load_model(&req.model)?;
    let (polyhedra, cache_hit) = cached_workspaces(&robot, &req.search, cache)?;
    let (_, walkspace) = prepare_walkspace(&robot, &req.search, cache)?;
    let mut artifacts = Vec::new();
    let mut legs = Vec::new();
    for (ws, leg) in polyhedra.iter().zip(&robot.legs) {
        let radii = ws.slices.iter().flat_map(|s| s.radii.iter().copied());
        legs.push(LegWorkspace {
            leg_id: ws.leg_id,
            slices: ws.slices.len(),
            bearings: ws.bearing_count(),
            min_radius: radii.clone().fold(f64::INFINITY, f64::min),
            max_radius: radii.fold(0.0, f64::max),
        });
        artifacts.push(artifact(format!("workspace_leg{}.csv", ws.leg_id), polyhedron_csv(ws)));
        artifacts.push(artifact(format!("walkspace_leg{}.csv", ws.leg_id), walkspace_csv(&walkspace, [leg.default_tip[0], leg.default_tip[1]])));
    }
    Ok(WorkspaceResponse {
        cache_hit,
        legs,
        walkspace: walkspace.vertices().iter().map(|v| [v.x, v.y]).collect(),
        artifacts,
    })
}

pub fn trajectory(req: &TrajectoryRequest) -> ApiResult<TrajectoryResponse> {
    let (robot, gaits) = load_model(&req.model)?;
    let gait = find_gait(&gaits, &req.gait)?;
    if !(req.tick_rate > 0.0 && req.tick_rate.is_finite()) || req.periods == 0 {
        return Err(ApiError::validation("tick rate must be positive and periods at least 1"));
    }
    let walk = WalkController::new(&robot, gait.clone(), req.tick_rate).map_err(|e| ApiError::validation(e.to_string()))?;
    Ok(TrajectoryResponse {
        period_ticks: walk.clock().period_ticks(),
        artifacts: vec![
            artifact("trajectory.csv", trajectory_csv(&robot, gait, req.velocity, req.tick_rate, req.warmup, req.periods)?),
            artifact("gait_timing.csv", gait_timing_csv(&robot, gait, req.periods)?),
        ],
    })
}

fn check_rate(req: &RunRequest) -> ApiResult<()> {
    let r = req.options.tick_rate;
    if r.is_finite() && r > 0.0 {
        Ok(())
    } else {
        Err(ApiError::validation(format!("tick rate must be positive, got {r}")))
    }
}

fn load_script(req: &RunRequest, gaits: &[GaitSpec]) -> ApiResult<Script> {
    let script = parse_script(&req.script).map_err(|e| ApiError::validation(format!("script: {e}")))?;
    for e in &script.events {
        if let Event::Gait { name } = &e.event {
            find_gait(gaits, name).map_err(|err| ApiError::validation(format!("script: t={}: {}", e.t, err.0.message)))?;
        }
    }
    Ok(script)
}

pub fn run(req: &RunRequest, cache: Option<&Path>) -> ApiResult<RunResponse> {
    let (robot, gaits) = load_model(&req.model)?;
    check_rate(req)?;
    let script = load_script(req, &gaits)?;
    let (_, walkspace) = prepare_walkspace(&robot, &req.search, cache)?;
    let res = run_script(&robot, &gaits, &walkspace, &script, &req.options)?;
    Ok(RunResponse {
        artifacts: vec![artifact("run_log.csv", run_log_csv(&robot, &res.log)), artifact("energy.csv", energy_csv(&res.energy))],
        summary: res.summary,
    })
}

pub fn sweep(req: &RunRequest, cache: Option<&Path>) -> ApiResult<SweepResponse> {
    let (robot, gaits) = load_model(&req.model)?;
    check_rate(req)?;
    let script = load_script(req, &gaits)?;
    if script.sweep.is_none() {
        return Err(ApiError::validation("script has no `sweep` directive"));
    }
    let (_, walkspace) = prepare_walkspace(&robot, &req.search, cache)?;
    let rows = run_sweep(&robot, &gaits, &walkspace, &script, &req.options)?;
    let cot: Vec<f64> = rows.iter().map(|r| r.cot).collect();
    Ok(SweepResponse {
        interior_minimum: has_interior_minimum(&cot),
        artifacts: vec![artifact("sweep.csv", sweep_csv(&rows))],
        rows,
    })
}
