//! The single task that owns the session. Transports feed it decoded
//! envelopes; it hands back per-connection outbound queues. Every state
//! change therefore happens on one task, in arrival order.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use tokio::sync::{mpsc, oneshot};
use tokio::time::MissedTickBehavior;

use datacube::dataset::Dataset;
use datacube::protocol::{Envelope, OpPayload, ProtocolError, SessionState};
use datacube::server::{ArtifactError, ArtifactSummary, ConnId, Server, ServerOutput, ServerStats, SystemClock};

pub const TICK: Duration = Duration::from_millis(25);

#[derive(Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Outbound {
    Envelope(Envelope),
    Close,
}

pub struct Inspection {
    pub state: SessionState,
    pub log: Vec<(u64, OpPayload)>,
    pub stats: ServerStats,
    pub participants: usize,
}

#[allow(clippy::large_enum_variant)]
enum Request {
    Connect { conn: ConnId, outbound: mpsc::UnboundedSender<Outbound> },
    Frame { conn: ConnId, frame: Result<Envelope, ProtocolError> },
    Disconnect { conn: ConnId },
    Inspect { reply: oneshot::Sender<Inspection> },
    Dataset { reply: oneshot::Sender<Option<Arc<Dataset>>> },
    Shutdown { reply: oneshot::Sender<Result<ArtifactSummary, ArtifactError>> },
}

/// Cheap, cloneable handle to the hub task.
#[derive(Clone)]
pub struct Hub {
    requests: mpsc::UnboundedSender<Request>,
    next_conn: Arc<std::sync::atomic::AtomicU64>,
}

impl Hub {
    /// Starts the hub. Artifacts are written under `data_dir` on shutdown.
    pub fn spawn(server: Server, data_dir: PathBuf) -> Self {
        let (tx, rx) = mpsc::unbounded_channel();
        tokio::spawn(run(server, data_dir, rx));
        Self {
            requests: tx,
            next_conn: Arc::new(std::sync::atomic::AtomicU64::new(1)),
        }
    }

    /// Registers a new transport connection and returns its id and the
    /// queue of envelopes to write to it.
    pub fn connect(&self) -> (ConnId, mpsc::UnboundedReceiver<Outbound>) {
        let conn = ConnId(self.next_conn.fetch_add(1, std::sync::atomic::Ordering::Relaxed));
        let (tx, rx) = mpsc::unbounded_channel();
        let _ = self.requests.send(Request::Connect { conn, outbound: tx });
        (conn, rx)
    }

    pub fn frame(&self, conn: ConnId, frame: Result<Envelope, ProtocolError>) {
        let _ = self.requests.send(Request::Frame { conn, frame });
    }

    pub fn disconnect(&self, conn: ConnId) {
        let _ = self.requests.send(Request::Disconnect { conn });
    }

    pub async fn inspect(&self) -> Option<Inspection> {
        let (reply, rx) = oneshot::channel();
        self.requests.send(Request::Inspect { reply }).ok()?;
        rx.await.ok()
    }

    pub async fn dataset(&self) -> Option<Arc<Dataset>> {
        let (reply, rx) = oneshot::channel();
        self.requests.send(Request::Dataset { reply }).ok()?;
        rx.await.ok().flatten()
    }

    /// Persists artifacts and stops the hub; later calls return None.
    pub async fn shutdown(&self) -> Option<Result<ArtifactSummary, ArtifactError>> {
        let (reply, rx) = oneshot::channel();
        self.requests.send(Request::Shutdown { reply }).ok()?;
        rx.await.ok()
    }
}

struct State {
    server: Server,
    started: Instant,
    outbound: HashMap<ConnId, mpsc::UnboundedSender<Outbound>>,
}

impl State {
    fn now(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    fn dispatch(&mut self, outputs: Vec<ServerOutput>) {
        for output in outputs {
            match output {
                ServerOutput::Send(conn, envelope) => {
                    if let Some(tx) = self.outbound.get(&conn) {
                        let _ = tx.send(Outbound::Envelope(envelope));
                    }
                }
                ServerOutput::Close(conn) => {
                    if let Some(tx) = self.outbound.remove(&conn) {
                        let _ = tx.send(Outbound::Close);
                    }
                }
            }
        }
    }
}

async fn run(server: Server, data_dir: PathBuf, mut requests: mpsc::UnboundedReceiver<Request>) {
    let mut state = State {
        server,
        started: Instant::now(),
        outbound: HashMap::new(),
    };
    let mut tick = tokio::time::interval(TICK);
    tick.set_missed_tick_behavior(MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            request = requests.recv() => {
                let Some(request) = request else { break };
                let now = state.now();
                match request {
                    Request::Connect { conn, outbound } => {
                        state.server.connect(conn, now);
                        state.outbound.insert(conn, outbound);
                    }
                    Request::Frame { conn, frame } => {
                        let out = match frame {
                            Ok(envelope) => state.server.receive(conn, envelope, now),
                            Err(error) => state.server.reject_frame(conn, &error, now),
                        };
                        state.dispatch(out);
                    }
                    Request::Disconnect { conn } => {
                        state.outbound.remove(&conn);
                        let out = state.server.disconnect(conn, now);
                        state.dispatch(out);
                    }
                    Request::Inspect { reply } => {
                        let _ = reply.send(Inspection {
                            state: state.server.state().clone(),
                            log: state.server.op_log().cloned().collect(),
                            stats: state.server.stats().clone(),
                            participants: state.server.participant_count(),
                        });
                    }
                    Request::Dataset { reply } => {
                        let _ = reply.send(state.server.dataset().cloned());
                    }
                    Request::Shutdown { reply } => {
                        let result = state.server.persist_artifacts(&data_dir, &SystemClock);
                        for tx in state.outbound.values() {
                            let _ = tx.send(Outbound::Close);
                        }
                        let _ = reply.send(result);
                        break;
                    }
                }
            }
            _ = tick.tick() => {
                let now = state.now();
                let out = state.server.tick(now);
                state.dispatch(out);
            }
        }
    }
}
