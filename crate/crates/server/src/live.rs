//! The real-time tick thread and its mailboxes.
//!
//! Commands go in through a bounded channel; when it is full the newest
//! command is refused (`busy`) rather than queued behind stale input.
//! States go out through a broadcast channel that drops the oldest entries
//! for receivers that fall behind.

use hexgait_core::model::{GaitSpec, RobotSpec};
use hexgait_core::ops::{OpsError, RunOptions};
use hexgait_core::robotctrl::ControlError;
use hexgait_core::teleop::{Command, EngineConfig, Hello, StateMessage, TeleopEngine};
use hexgait_core::workspace::Walkspace;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, SyncSender, TrySendError};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};
use tokio::sync::{broadcast, oneshot};

#[derive(Clone, Debug)]
pub struct LiveConfig {
    pub robot: RobotSpec,
    pub gaits: Vec<GaitSpec>,
    pub walkspace: Walkspace,
    pub options: RunOptions,
    pub engine: EngineConfig,
    /// Pending commands before new ones are refused.
    pub mailbox: usize,
}

#[derive(Debug)]
pub enum SubmitError {
    Busy,
    Stopped,
}

/// Outcome of an applied command: the ticks at receipt and application.
pub type Applied = Result<(u64, u64), ControlError>;

struct Pending {
    command: Command,
    received: u64,
    reply: oneshot::Sender<Applied>,
}

pub struct Live {
    commands: SyncSender<Pending>,
    states: broadcast::Sender<Arc<StateMessage>>,
    latest: Arc<RwLock<Arc<StateMessage>>>,
    tick: Arc<AtomicU64>,
    hello: Hello,
    sessions: AtomicU64,
    stop: Arc<AtomicBool>,
    thread: Mutex<Option<JoinHandle<()>>>,
}

impl Live {
    /// Builds the engine and starts ticking at `options.tick_rate` in real time.
    pub fn start(cfg: LiveConfig) -> Result<Arc<Self>, OpsError> {
        let mut engine = TeleopEngine::new(&cfg.robot, &cfg.gaits, cfg.walkspace, &cfg.options, cfg.engine)?;
        let hello = engine.hello(0);
        let latest = Arc::new(RwLock::new(Arc::new(engine.latest().clone())));
        let (states, _) = broadcast::channel(16);
        let (commands, rx) = mpsc::sync_channel::<Pending>(cfg.mailbox.max(1));
        let tick = Arc::new(AtomicU64::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let period = Duration::from_secs_f64(1.0 / cfg.options.tick_rate);
        let thread = {
            let (latest, states, tick, stop) = (latest.clone(), states.clone(), tick.clone(), stop.clone());
            std::thread::Builder::new()
                .name("hexgait-tick".into())
                .spawn(move || {
                    let mut next = Instant::now();
                    while !stop.load(Ordering::Relaxed) {
                        while let Ok(p) = rx.try_recv() {
                            let applied = engine.ticks();
                            let _ = p.reply.send(engine.apply(&p.command).map(|()| (p.received, applied)));
                        }
                        match engine.tick() {
                            Ok(Some(state)) => {
                                let state = Arc::new(state);
                                *latest.write().expect("state lock") = state.clone();
                                let _ = states.send(state);
                            }
                            Ok(None) => {}
                            Err(e) => {
                                tracing::error!("control loop stopped: {e}");
                                break;
                            }
                        }
                        tick.store(engine.ticks(), Ordering::Release);
                        next += period;
                        let now = Instant::now();
                        if next > now {
                            std::thread::sleep(next - now);
                        } else if now - next > period * 20 {
                            // far behind (debugger, suspended host): do not burst
                            next = now;
                        }
                    }
                })
                .expect("spawn tick thread")
        };
        Ok(Arc::new(Self {
            commands,
            states,
            latest,
            tick,
            hello,
            sessions: AtomicU64::new(1),
            stop,
            thread: Mutex::new(Some(thread)),
        }))
    }

    pub fn submit(&self, command: Command) -> Result<oneshot::Receiver<Applied>, SubmitError> {
        let (reply, rx) = oneshot::channel();
        let received = self.tick.load(Ordering::Acquire);
        match self.commands.try_send(Pending { command, received, reply }) {
            Ok(()) => Ok(rx),
            Err(TrySendError::Full(_)) => Err(SubmitError::Busy),
            Err(TrySendError::Disconnected(_)) => Err(SubmitError::Stopped),
        }
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Arc<StateMessage>> {
        self.states.subscribe()
    }

    pub fn latest(&self) -> Arc<StateMessage> {
        self.latest.read().expect("state lock").clone()
    }

    pub fn tick(&self) -> u64 {
        self.tick.load(Ordering::Acquire)
    }

    pub fn open_session(&self) -> Hello {
        Hello { session: self.sessions.fetch_add(1, Ordering::Relaxed), ..self.hello.clone() }
    }

    pub fn shutdown(&self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.lock().expect("thread lock").take() {
            let _ = t.join();
        }
    }
}

impl Drop for Live {
    fn drop(&mut self) {
        self.shutdown();
    }
}
