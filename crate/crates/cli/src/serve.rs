//! Live simulation behind a WebSocket service: state broadcasts at a fixed
//! cadence, teleop commands in.
//!
//! One thread owns the episode. Connections only forward parsed client
//! messages into its queue, which is drained before every simulation step,
//! and relay the serialized broadcasts.

use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

use predator_core::classes::NUM_CLASSES;
use predator_core::control::Mode;
use predator_core::sim::{Detector, Episode, EpisodeConfig, Pose, Snapshot};

/// Broadcast to every client once per tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerMessage {
    #[serde(rename = "type")]
    pub kind: String,
    pub t: f64,
    pub predator: Pose,
    pub prey: Pose,
    pub mode: Mode,
    pub outputs: [f64; NUM_CLASSES],
    pub alpha: f64,
    pub p_mag: f64,
    pub dvs_rate_hz: f64,
    pub aps_rate_hz: f64,
    pub dropped_frames: u64,
}

impl From<Snapshot> for ServerMessage {
    fn from(s: Snapshot) -> Self {
        Self {
            kind: "state".into(),
            t: s.t,
            predator: s.predator,
            prey: s.prey,
            mode: s.mode,
            outputs: s.outputs,
            alpha: s.alpha,
            p_mag: s.p_mag,
            dvs_rate_hz: s.dvs_rate_hz,
            aps_rate_hz: s.aps_rate_hz,
            dropped_frames: s.dropped_frames,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// Out-of-range values are clamped by the simulation.
    PreyCmd { v: f64, w: f64 },
    /// Without `paused` the pause state toggles.
    Pause {
        #[serde(default)]
        paused: Option<bool>,
    },
    /// Restart the episode, optionally with a new seed.
    Reset {
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug)]
enum Control {
    Message(u64, ClientMessage),
    Disconnected(u64),
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub config: EpisodeConfig,
    pub detector: Detector,
    pub broadcast_hz: f64,
}

impl ServeOptions {
    pub fn new(config: EpisodeConfig, detector: Detector) -> Self {
        Self {
            config,
            detector,
            broadcast_hz: 20.0,
        }
    }
}

/// Running service; dropping it without `shutdown` leaves the threads
/// running until the process exits.
pub struct ServerHandle {
    addr: SocketAddr,
    errors: Arc<AtomicU64>,
    stop: Arc<AtomicBool>,
    accept: JoinHandle<()>,
    sim: Option<thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Client messages ignored because they did not parse.
    pub fn errors(&self) -> u64 {
        self.errors.load(Ordering::Relaxed)
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::Relaxed);
        self.accept.abort();
        if let Some(t) = self.sim.take() {
            let _ = t.join();
        }
    }
}

/// Bind `addr` and start the simulation and accept loops.
pub async fn start(addr: &str, options: ServeOptions) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let episode = Episode::new(options.config.clone(), options.detector.clone())
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?
        .live();
    let (ctl_tx, ctl_rx) = mpsc::unbounded_channel();
    let (bc_tx, _) = broadcast::channel::<String>(16);
    let errors = Arc::new(AtomicU64::new(0));
    let stop = Arc::new(AtomicBool::new(false));

    let sim = {
        let bc_tx = bc_tx.clone();
        let stop = stop.clone();
        thread::Builder::new()
            .name("sim".into())
            .spawn(move || run_sim(episode, options, ctl_rx, bc_tx, stop))?
    };

    let accept = {
        let errors = errors.clone();
        tokio::spawn(async move {
            let mut next_id = 0u64;
            while let Ok((stream, _)) = listener.accept().await {
                next_id += 1;
                tokio::spawn(connection(
                    stream,
                    next_id,
                    ctl_tx.clone(),
                    bc_tx.subscribe(),
                    errors.clone(),
                ));
            }
        })
    };

    Ok(ServerHandle {
        addr: local,
        errors,
        stop,
        accept,
        sim: Some(sim),
    })
}

/// Serve until Ctrl-C.
pub fn serve_blocking(addr: &str, options: ServeOptions) -> anyhow::Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let handle = start(addr, options).await?;
        eprintln!("serving on ws://{}", handle.local_addr());
        tokio::signal::ctrl_c().await?;
        let errors = handle.errors();
        handle.shutdown();
        eprintln!("stopped ({errors} malformed client messages)");
        Ok(())
    })
}

fn run_sim(
    mut episode: Episode,
    options: ServeOptions,
    mut ctl: mpsc::UnboundedReceiver<Control>,
    out: broadcast::Sender<String>,
    stop: Arc<AtomicBool>,
) {
    let mut config = options.config;
    let period = Duration::from_secs_f64(1.0 / options.broadcast_hz);
    let steps = ((period.as_micros() as u64) / config.loop_config.dt_us).max(1);
    let mut paused = false;
    let mut last_writer: Option<u64> = None;
    let mut next = Instant::now();

    let mut drain = |episode: &mut Episode, paused: &mut bool, config: &mut EpisodeConfig| {
        while let Ok(c) = ctl.try_recv() {
            match c {
                Control::Message(id, ClientMessage::PreyCmd { v, w }) => {
                    episode.set_prey_command(v, w);
                    last_writer = Some(id);
                }
                Control::Message(_, ClientMessage::Pause { paused: p }) => {
                    *paused = p.unwrap_or(!*paused);
                }
                Control::Message(_, ClientMessage::Reset { seed }) => {
                    if let Some(s) = seed {
                        config.seed = s;
                    }
                    *episode = Episode::new(config.clone(), options.detector.clone())
                        .expect("config validated at start")
                        .live();
                    last_writer = None;
                }
                Control::Disconnected(id) => {
                    if last_writer == Some(id) {
                        episode.set_prey_command(0.0, 0.0);
                        last_writer = None;
                    }
                }
            }
        }
    };

    while !stop.load(Ordering::Relaxed) {
        if paused {
            drain(&mut episode, &mut paused, &mut config);
        } else {
            for _ in 0..steps {
                drain(&mut episode, &mut paused, &mut config);
                if paused || episode.finished() {
                    break;
                }
                episode.step();
            }
        }
        let msg = ServerMessage::from(episode.snapshot());
        // No subscribers is not an error.
        let _ = out.send(serde_json::to_string(&msg).expect("state serializes"));
        next += period;
        let now = Instant::now();
        if next > now {
            thread::sleep(next - now);
        } else {
            // Behind: slow simulated time down instead of skipping.
            next = now;
        }
    }
}

async fn connection(
    stream: TcpStream,
    id: u64,
    ctl: mpsc::UnboundedSender<Control>,
    mut states: broadcast::Receiver<String>,
    errors: Arc<AtomicU64>,
) {
    let Ok(ws) = tokio_tungstenite::accept_async(stream).await else {
        return;
    };
    let (mut sink, mut source) = ws.split();
    let writer = tokio::spawn(async move {
        loop {
            match states.recv().await {
                Ok(text) => {
                    if sink.send(Message::text(text)).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => break,
            }
        }
    });
    while let Some(msg) = source.next().await {
        match msg {
            Ok(Message::Text(text)) => match serde_json::from_str::<ClientMessage>(text.as_str()) {
                Ok(m) => {
                    let _ = ctl.send(Control::Message(id, m));
                }
                Err(_) => {
                    errors.fetch_add(1, Ordering::Relaxed);
                }
            },
            Ok(Message::Binary(_)) => {
                errors.fetch_add(1, Ordering::Relaxed);
            }
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => {}
        }
    }
    let _ = ctl.send(Control::Disconnected(id));
    writer.abort();
}
