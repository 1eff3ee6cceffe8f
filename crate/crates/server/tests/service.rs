use hexgait_client::{Client, ClientError};
use hexgait_core::api::*;
use hexgait_core::model::{default_gait_library, load_robot_spec};
use hexgait_core::ops::{prepare_walkspace, RunOptions};
use hexgait_core::robotctrl::ModeRequest;
use hexgait_core::teleop::{Command, EngineConfig, ErrorCode, ServerMessage};
use hexgait_core::workspace::{PlanarVelocity, SearchParams};
use hexgait_server::live::Live;
use hexgait_server::{AppState, LiveConfig};
use std::path::PathBuf;
use std::time::{Duration, Instant};
use tokio::sync::oneshot;

const HEXAPOD: &str = include_str!("../../../configs/hexapod.toml");

fn coarse() -> SearchParams {
    SearchParams { delta_alpha: 10f64.to_radians(), h_min: 0.0, h_max: 0.0, ..SearchParams::default() }
}

struct Harness {
    client: Client,
    stop: Option<oneshot::Sender<()>>,
    server: Option<tokio::task::JoinHandle<std::io::Result<()>>>,
}

impl Harness {
    async fn start(live: bool, cache_dir: Option<PathBuf>) -> Self {
        let live = live.then(|| {
            let robot = load_robot_spec(HEXAPOD).unwrap();
            let (_, walkspace) = prepare_walkspace(&robot, &coarse(), None).unwrap();
            Live::start(LiveConfig {
                robot,
                gaits: default_gait_library(),
                walkspace,
                options: RunOptions::default(),
                engine: EngineConfig::default(),
                mailbox: 8,
            })
            .unwrap()
        });
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let (stop, stopped) = oneshot::channel::<()>();
        let server = tokio::spawn(hexgait_server::serve(listener, AppState { live, cache_dir }, async {
            let _ = stopped.await;
        }));
        Self { client: Client::new(format!("http://{addr}")), stop: Some(stop), server: Some(server) }
    }

    async fn stop(mut self) {
        let _ = self.stop.take().unwrap().send(());
        self.server.take().unwrap().await.unwrap().unwrap();
    }
}

fn model() -> ModelInput {
    ModelInput { robot: HEXAPOD.into(), gaits: None }
}

#[tokio::test]
async fn validate_reports_model_and_rejects_bad_input() {
    let h = Harness::start(false, None).await;
    let r = h.client.validate(&model()).await.unwrap();
    assert_eq!(r.name, "hexapod");
    assert_eq!(r.legs, vec![3; 6]);
    assert!(r.gaits.contains(&"tripod".to_string()));
    let bad = ModelInput { robot: HEXAPOD.replace("mass = 3.0", "mass = -1.0"), gaits: None };
    let e = h.client.validate(&bad).await.unwrap_err();
    assert!(e.is_validation(), "{e}");
    let e = h.client.validate(&ModelInput { robot: "not toml [".into(), gaits: None }).await.unwrap_err();
    assert!(e.is_validation(), "{e}");
    h.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn workspace_is_cached_between_requests() {
    let dir = tempfile::tempdir().unwrap();
    let h = Harness::start(false, Some(dir.path().to_path_buf())).await;
    let req = WorkspaceRequest { model: model(), search: coarse() };
    let first = h.client.workspace(&req).await.unwrap();
    let second = h.client.workspace(&req).await.unwrap();
    assert!(!first.cache_hit && second.cache_hit);
    assert_eq!(first.legs, second.legs);
    assert_eq!(first.walkspace, second.walkspace);
    assert_eq!(first.legs.len(), 6);
    assert!(first.legs.iter().all(|l| l.min_radius > 0.0 && l.max_radius >= l.min_radius));
    let names: Vec<&str> = first.artifacts.iter().map(|a| a.name.as_str()).collect();
    assert!(names.contains(&"workspace_leg1.csv") && names.contains(&"walkspace_leg6.csv"));
    h.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn trajectory_and_run() {
    let h = Harness::start(false, None).await;
    let t = h
        .client
        .trajectory(&TrajectoryRequest { model: model(), gait: "tripod".into(), velocity: PlanarVelocity::new(0.1, 0.0, 0.0), tick_rate: 200.0, warmup: 1, periods: 2 })
        .await
        .unwrap();
    assert_eq!(t.period_ticks, 200);
    let traj = &t.artifacts[0].content;
    // header plus six legs per tick over two periods
    assert_eq!(traj.lines().count(), 1 + 6 * 2 * 200);
    let unknown = TrajectoryRequest { model: model(), gait: "canter".into(), velocity: PlanarVelocity::default(), tick_rate: 200.0, warmup: 0, periods: 1 };
    assert!(h.client.trajectory(&unknown).await.unwrap_err().is_validation());

    let req = RunRequest { model: model(), script: "t=0 velocity 0.2 0 0\nt=2 end".into(), options: RunOptions::default(), search: coarse() };
    let r = h.client.run(&req).await.unwrap();
    assert_eq!(r.summary.ticks, 400);
    assert_eq!(r.summary.limit_violations, 0);
    assert!(r.summary.distance > 0.2);
    assert_eq!(r.artifacts.len(), 2);
    let bad = RunRequest { script: "t=0 hover".into(), ..req.clone() };
    assert!(h.client.run(&bad).await.unwrap_err().is_validation());
    let no_sweep = h.client.sweep(&req).await.unwrap_err();
    assert!(no_sweep.is_validation());
    h.stop().await;
}

#[tokio::test]
async fn live_endpoints_need_a_live_robot() {
    let h = Harness::start(false, None).await;
    match h.client.state().await.unwrap_err() {
        ClientError::Api(b) => assert_eq!(b.kind, ErrorKind::Runtime),
        other => panic!("{other}"),
    }
    assert!(h.client.connect().await.is_err());
    h.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn state_endpoint_serves_latest() {
    let h = Harness::start(true, None).await;
    tokio::time::sleep(Duration::from_millis(200)).await;
    let a = h.client.state().await.unwrap();
    tokio::time::sleep(Duration::from_millis(200)).await;
    let b = h.client.state().await.unwrap();
    assert!(b.tick > a.tick && a.tick > 0);
    assert_eq!(b.legs.len(), 6);
    h.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn teleop_session() {
    let h = Harness::start(true, None).await;
    let mut t = h.client.connect().await.unwrap();
    assert_eq!(t.hello().gaits.len(), 5);
    assert_eq!(t.hello().stream_rate, 20.0);

    // streamed at ~20 Hz
    let start = Instant::now();
    let first = t.state().await.unwrap().tick;
    let mut last = first;
    for _ in 0..20 {
        last = t.state().await.unwrap().tick;
    }
    assert_eq!((last - first) % 10, 0);
    let rate = 20.0 / start.elapsed().as_secs_f64();
    assert!((15.0..25.0).contains(&rate), "{rate}");

    let seq = t.send(Command::Velocity { linear: [0.2, 0.0, 0.0], angular: [0.0; 3] }).await.unwrap();
    match t.reply(seq).await.unwrap() {
        ServerMessage::Ack { tick_received, tick_applied, .. } => assert!(tick_applied - tick_received <= 2),
        other => panic!("{other:?}"),
    }
    let s = t.state().await.unwrap();
    assert_eq!(s.metrics.velocity_target.x, 0.2);

    // protocol errors, then a rejected command that leaves its seq unused
    t.send_raw(r#"{"proto":1,"seq":1,"type":"mode","mode":"start"}"#.into()).await.unwrap();
    assert!(matches!(t.reply(0).await.unwrap(), ServerMessage::Error { error, .. } if error.code == ErrorCode::StaleSeq));
    t.send_raw(r#"{"proto":9,"seq":5,"type":"mode","mode":"start"}"#.into()).await.unwrap();
    assert!(matches!(t.reply(0).await.unwrap(), ServerMessage::Error { error, .. } if error.code == ErrorCode::ProtoVersion));
    let seq = t.send(Command::GaitSelect { gait: "canter".into() }).await.unwrap();
    assert!(matches!(t.reply(seq).await.unwrap(), ServerMessage::Error { error, .. } if error.code == ErrorCode::Rejected && error.seq == Some(seq)));
    t.send_raw(format!(r#"{{"proto":1,"seq":{seq},"type":"gait_select","gait":"wave"}}"#)).await.unwrap();
    assert!(matches!(t.reply(seq).await.unwrap(), ServerMessage::Ack { .. }));

    // silence trips the dead-man
    let quiet = Instant::now();
    loop {
        let s = t.state().await.unwrap();
        if s.dead_man {
            assert_eq!(s.metrics.velocity_target.x, 0.0);
            break;
        }
        assert!(quiet.elapsed() < Duration::from_secs(2));
    }
    let stopped_after = quiet.elapsed().as_secs_f64();
    assert!(stopped_after <= 0.6 + 0.06, "{stopped_after}");
    t.close().await.unwrap();
    h.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn sessions_are_independent() {
    let h = Harness::start(true, None).await;
    let mut a = h.client.connect().await.unwrap();
    let mut b = h.client.connect().await.unwrap();
    assert_ne!(a.hello().session, b.hello().session);
    // both start at seq 1 without tripping each other's ordering
    let sa = a.send(Command::Mode { mode: ModeRequest::Pack }).await.unwrap();
    let sb = b.send(Command::Params { step_frequency: Some(1.5), pose_mode: None, inclination: None }).await.unwrap();
    assert_eq!((sa, sb), (1, 1));
    assert!(matches!(a.reply(sa).await.unwrap(), ServerMessage::Ack { .. }));
    assert!(matches!(b.reply(sb).await.unwrap(), ServerMessage::Ack { .. }));
    h.stop().await;
}
