//! `hexgait`: command-line client of the hexgait service. Without
//! `--server` an in-process server is started on a loopback port.
//!
//! Exit codes: 0 success, 1 invalid input, 2 runtime failure.

use clap::{Args, Parser, Subcommand};
use hexgait_client::{Client, ClientError};
use hexgait_core::api::*;
use hexgait_core::ops::{prepare_walkspace, RunOptions};
use hexgait_core::sim::SimConfig;
use hexgait_core::teleop::EngineConfig;
use hexgait_core::workspace::{PlanarVelocity, SearchParams};
use hexgait_server::live::Live;
use hexgait_server::{handlers, AppState, LiveConfig};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "hexgait", version, about = "Quasi-static multilegged locomotion: workspaces, gaits, simulation and teleop")]
struct Cli {
    /// Service to use; an in-process server when absent.
    #[arg(long, env = "HEXGAIT_SERVER", global = true)]
    server: Option<String>,
    /// Robot description (TOML).
    #[arg(long, env = "HEXGAIT_ROBOT", global = true, default_value = "configs/hexapod.toml")]
    robot: PathBuf,
    /// Gait library (TOML); built-in gaits when absent.
    #[arg(long, env = "HEXGAIT_GAITS", global = true)]
    gaits: Option<PathBuf>,
    /// Directory for generated CSV files.
    #[arg(long, env = "HEXGAIT_OUT", global = true, default_value = "out")]
    out: PathBuf,
    /// Control rate, Hz.
    #[arg(long, env = "HEXGAIT_TICK_RATE", global = true, default_value_t = 200.0)]
    tick_rate: f64,
    /// Seed for simulated sensor noise.
    #[arg(long, env = "HEXGAIT_SEED", global = true, default_value_t = 0)]
    seed: u64,
    /// Workspace cache directory (in-process server and `serve`).
    #[arg(long, env = "HEXGAIT_CACHE", global = true)]
    cache: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug, Clone)]
struct Search {
    /// Bearing step, degrees.
    #[arg(long, default_value_t = 5.0)]
    delta_alpha: f64,
    /// Radial probe step, m.
    #[arg(long, default_value_t = 0.005)]
    delta_d: f64,
    /// Lowest slice relative to the default tip, m.
    #[arg(long, default_value_t = -0.04, allow_hyphen_values = true)]
    h_min: f64,
    #[arg(long, default_value_t = 0.04, allow_hyphen_values = true)]
    h_max: f64,
    #[arg(long, default_value_t = 0.02)]
    delta_h: f64,
}

impl Search {
    fn params(&self) -> SearchParams {
        SearchParams {
            delta_alpha: self.delta_alpha.to_radians(),
            delta_d: self.delta_d,
            h_min: self.h_min,
            h_max: self.h_max,
            delta_h: self.delta_h,
            ..SearchParams::default()
        }
    }
}

#[derive(Args, Debug, Clone)]
struct Sim {
    /// Ground incline about the world y axis, degrees.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    incline: f64,
    /// IMU noise standard deviation, rad.
    #[arg(long, default_value_t = 0.0)]
    imu_noise: f64,
    /// Suspend the body: legs move but nothing touches the ground.
    #[arg(long)]
    air: bool,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Check a robot description and gait library.
    Validate,
    /// Leg workspaces and walkspace.
    Workspace(Search),
    /// Tip trajectories and gait timing at a constant velocity.
    Trajectory {
        #[arg(long, default_value = "tripod")]
        gait: String,
        /// Body velocity: x y yaw (m/s, m/s, rad/s).
        #[arg(long, num_args = 3, value_names = ["X", "Y", "YAW"], default_values_t = [0.1, 0.0, 0.0], allow_hyphen_values = true)]
        velocity: Vec<f64>,
        #[arg(long, default_value_t = 4)]
        periods: u32,
        #[arg(long, default_value_t = 1)]
        warmup: u32,
    },
    /// Simulate a command script.
    Run {
        script: PathBuf,
        #[command(flatten)]
        sim: Sim,
        #[command(flatten)]
        search: Search,
    },
    /// Step-frequency sweep of a script with a `sweep` directive.
    Sweep {
        script: PathBuf,
        #[command(flatten)]
        sim: Sim,
        #[command(flatten)]
        search: Search,
    },
    /// Run the service with a live simulated robot.
    Serve {
        #[arg(long, env = "HEXGAIT_BIND", default_value = "127.0.0.1:8080")]
        bind: String,
        /// State stream rate, Hz.
        #[arg(long, default_value_t = 20.0)]
        stream_rate: f64,
        /// Seconds without commands before the robot is stopped.
        #[arg(long, default_value_t = 0.5)]
        deadman: f64,
        #[command(flatten)]
        sim: Sim,
        #[command(flatten)]
        search: Search,
    },
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        if e.is_validation() {
            Failure::Invalid(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path, what: &str) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Invalid(format!("cannot read {what} {}: {e}", path.display())))
}

fn print<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("responses serialise"));
}

fn write_artifacts(out: &Path, artifacts: &[Artifact]) -> Outcome {
    std::fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    for a in artifacts {
        let p = out.join(&a.name);
        std::fs::write(&p, &a.content).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

impl Cli {
    fn model(&self) -> Result<ModelInput, Failure> {
        Ok(ModelInput {
            robot: read(&self.robot, "robot")?,
            gaits: self.gaits.as_deref().map(|p| read(p, "gaits")).transpose()?,
        })
    }

    fn options(&self, sim: &Sim) -> Result<RunOptions, Failure> {
        if !(self.tick_rate.is_finite() && self.tick_rate > 0.0) {
            return Err(Failure::Invalid(format!("tick rate must be positive, got {}", self.tick_rate)));
        }
        Ok(RunOptions {
            tick_rate: self.tick_rate,
            sim: SimConfig { incline: sim.incline.to_radians(), grounded: !sim.air, imu_noise: sim.imu_noise, seed: self.seed },
            ..RunOptions::default()
        })
    }

    fn run_request(&self, script: &Path, sim: &Sim, search: &Search) -> Result<RunRequest, Failure> {
        Ok(RunRequest { model: self.model()?, script: read(script, "script")?, options: self.options(sim)?, search: search.params() })
    }

    async fn client_command(&self, client: &Client) -> Outcome {
        match &self.command {
            Cmd::Validate => print(&client.validate(&self.model()?).await?),
            Cmd::Workspace(search) => {
                let mut r = client.workspace(&WorkspaceRequest { model: self.model()?, search: search.params() }).await?;
                write_artifacts(&self.out, &std::mem::take(&mut r.artifacts))?;
                print(&serde_json::json!({ "cache_hit": r.cache_hit, "legs": r.legs, "walkspace_vertices": r.walkspace.len() }));
            }
            Cmd::Trajectory { gait, velocity, periods, warmup } => {
                let req = TrajectoryRequest {
                    model: self.model()?,
                    gait: gait.clone(),
                    velocity: PlanarVelocity::new(velocity[0], velocity[1], velocity[2]),
                    tick_rate: self.tick_rate,
                    warmup: *warmup,
                    periods: *periods,
                };
                let r = client.trajectory(&req).await?;
                write_artifacts(&self.out, &r.artifacts)?;
                print(&serde_json::json!({ "period_ticks": r.period_ticks }));
            }
            Cmd::Run { script, sim, search } => {
                let r = client.run(&self.run_request(script, sim, search)?).await?;
                write_artifacts(&self.out, &r.artifacts)?;
                print(&r.summary);
            }
            Cmd::Sweep { script, sim, search } => {
                let r = client.sweep(&self.run_request(script, sim, search)?).await?;
                write_artifacts(&self.out, &r.artifacts)?;
                print(&serde_json::json!({ "rows": r.rows, "interior_minimum": r.interior_minimum }));
            }
            Cmd::Serve { .. } => unreachable!("serve is not a client command"),
        }
        Ok(())
    }

    async fn serve(&self, bind: &str, stream_rate: f64, deadman: f64, sim: &Sim, search: &Search) -> Outcome {
        let model = self.model()?;
        let (robot, gaits) = handlers::load_model(&model).map_err(|e| Failure::Invalid(e.0.message))?;
        let (_, walkspace) = prepare_walkspace(&robot, &search.params(), self.cache.as_deref()).map_err(|e| Failure::Runtime(e.to_string()))?;
        let live = Live::start(LiveConfig {
            robot,
            gaits,
            walkspace,
            options: self.options(sim)?,
            engine: EngineConfig { deadman_timeout: deadman, stream_rate, ..EngineConfig::default() },
            mailbox: 64,
        })
        .map_err(|e| Failure::Invalid(e.to_string()))?;
        let listener = tokio::net::TcpListener::bind(bind).await.map_err(|e| Failure::Runtime(format!("bind {bind}: {e}")))?;
        tracing::info!("listening on http://{}", listener.local_addr().map_err(|e| Failure::Runtime(e.to_string()))?);
        let state = AppState { live: Some(live), cache_dir: self.cache.clone() };
        hexgait_server::serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Failure::Runtime(e.to_string()))
    }

    async fn execute(&self) -> Outcome {
        if let Cmd::Serve { bind, stream_rate, deadman, sim, search } = &self.command {
            return self.serve(bind, *stream_rate, *deadman, sim, search).await;
        }
        match &self.server {
            Some(url) => self.client_command(&Client::new(url.clone())).await,
            None => {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| Failure::Runtime(e.to_string()))?;
                let addr = listener.local_addr().map_err(|e| Failure::Runtime(e.to_string()))?;
                let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
                let state = AppState { live: None, cache_dir: self.cache.clone() };
                let server = tokio::spawn(hexgait_server::serve(listener, state, async {
                    let _ = stopped.await;
                }));
                let r = self.client_command(&Client::new(format!("http://{addr}"))).await;
                let _ = stop.send(());
                let _ = server.await;
                r
            }
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are invalid input; help and version are not errors
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match cli.execute().await {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
