//! HTTP request and response bodies shared by the service and its clients.
//! Robot and gait descriptions travel as TOML text, exactly as on disk.

use crate::ops::{RunOptions, RunSummary, SweepRow};
use crate::workspace::{PlanarVelocity, SearchParams};
use serde::{Deserialize, Serialize};

/// A generated file, returned inline; clients decide where it lands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    pub content: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// Bad input: config, script or request parameters.
    Validation,
    /// Valid input that failed while executing.
    Runtime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: ErrorKind,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelInput {
    pub robot: String,
    /// Gait library; the built-in one when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaits: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidateResponse {
    pub name: String,
    pub digest: String,
    pub mass: f64,
    /// Joint count per leg, in leg order.
    pub legs: Vec<usize>,
    pub gaits: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceRequest {
    #[serde(flatten)]
    pub model: ModelInput,
    #[serde(default)]
    pub search: SearchParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegWorkspace {
    pub leg_id: u8,
    pub slices: usize,
    pub bearings: usize,
    pub min_radius: f64,
    pub max_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceResponse {
    pub cache_hit: bool,
    pub legs: Vec<LegWorkspace>,
    /// Walkspace polygon about a default tip, body-frame xy offsets.
    pub walkspace: Vec<[f64; 2]>,
    pub artifacts: Vec<Artifact>,
}

fn default_periods() -> u32 {
    4
}

fn default_warmup() -> u32 {
    1
}

fn default_tick_rate() -> f64 {
    200.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRequest {
    #[serde(flatten)]
    pub model: ModelInput,
    pub gait: String,
    pub velocity: PlanarVelocity,
    #[serde(default = "default_tick_rate")]
    pub tick_rate: f64,
    #[serde(default = "default_warmup")]
    pub warmup: u32,
    #[serde(default = "default_periods")]
    pub periods: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryResponse {
    pub period_ticks: u64,
    pub artifacts: Vec<Artifact>,
}

/// Body of both `/api/run` and `/api/sweep`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    #[serde(flatten)]
    pub model: ModelInput,
    pub script: String,
    #[serde(default)]
    pub options: RunOptions,
    #[serde(default)]
    pub search: SearchParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResponse {
    pub summary: RunSummary,
    pub artifacts: Vec<Artifact>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResponse {
    pub rows: Vec<SweepRow>,
    pub interior_minimum: bool,
    pub artifacts: Vec<Artifact>,
}
