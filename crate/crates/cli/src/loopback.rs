//! Runs a scenario against a real server over loopback sockets: UDP
//! discovery, TCP framing and wall-clock timers instead of the virtual
//! network. Reports use the same format as the in-process simulator but
//! are not byte-reproducible.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpStream, UdpSocket};
use tokio::sync::watch;

use datacube::client::{
    Client, ClientConfig, ClientError, ClientEvent, ClientOutput, ClientPhase, SimulatedRoom,
};
use datacube::dataset::synth::{generate_population, PopulationSpec};
use datacube::protocol::{encode, state_digest, FrameDecoder, OpPayload, Role};
use datacube::server::DISCOVERY_PROBE;
use datacube::sim::{first_divergence, room_landmarks, BotBrain, ClientSummary, Scenario, SimReport};
use datacube::viewmath::{RigidTransform, UnitQuat, Vec3};

use crate::serve::{self, ServeConfig, ServeError};

/// Scripted faults the socket runner can reproduce.
pub fn check_supported(scenario: &Scenario) -> Result<(), String> {
    let unsupported = [
        ("silence", scenario.silences.is_empty()),
        ("gap", scenario.gaps.is_empty()),
        ("corrupt", scenario.corruptions.is_empty()),
    ];
    match unsupported.iter().find(|(_, empty)| !empty) {
        Some((name, _)) => Err(format!("`{name}` entries need the in-process simulator")),
        None => Ok(()),
    }
}

#[derive(Default)]
struct Tally {
    submitted: AtomicUsize,
    acked: AtomicUsize,
    rejections: Mutex<BTreeMap<String, u64>>,
}

#[derive(Clone, Copy)]
struct Progress {
    phase: ClientPhase,
    seq: u64,
    connected: bool,
}

struct Outcome {
    client: Client,
    full_states: u32,
    joins: u32,
    gaps: u32,
    failure: Option<ClientError>,
}

struct Driver {
    index: usize,
    client: Client,
    brain: Option<BotBrain>,
    rng: ChaCha8Rng,
    started: Instant,
    discovery_port: u16,
    ops: usize,
    op_interval_ms: u64,
    tally: Arc<Tally>,
    progress: Arc<Mutex<Vec<Progress>>>,
    outage: Option<(u64, u64)>,
    outcome_counts: (u32, u32, u32),
    failure: Option<ClientError>,
    decoder: FrameDecoder,
}

impl Driver {
    fn now(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    fn publish(&self) {
        self.progress.lock().unwrap()[self.index] = Progress {
            phase: self.client.phase(),
            seq: self.client.replica().server_seq,
            connected: self.client.is_connected(),
        };
    }

    fn next_bot_delay(&mut self) -> u64 {
        let i = self.op_interval_ms;
        self.rng.random_range(i.div_ceil(2)..=i + i / 2)
    }

    fn event(&mut self, event: ClientEvent) {
        match event {
            ClientEvent::Joined { .. } => self.outcome_counts.1 += 1,
            ClientEvent::Acked { .. } => {
                self.tally.acked.fetch_add(1, Ordering::Relaxed);
            }
            ClientEvent::Rejected { code, .. } => {
                *self.tally.rejections.lock().unwrap().entry(format!("{code:?}")).or_default() += 1;
            }
            ClientEvent::GapDetected { .. } => self.outcome_counts.2 += 1,
            ClientEvent::Failed(error) => {
                let key = match &error {
                    ClientError::SessionFull => "SessionFull".to_string(),
                    other => format!("{other:?}"),
                };
                *self.tally.rejections.lock().unwrap().entry(key).or_default() += 1;
                self.failure = Some(error);
            }
            ClientEvent::Synced { .. } => {}
        }
    }

    async fn apply(&mut self, outputs: Vec<ClientOutput>, stream: &mut Option<TcpStream>, udp: &UdpSocket) {
        let mut queue: VecDeque<ClientOutput> = outputs.into();
        while let Some(output) = queue.pop_front() {
            let now = self.now();
            match output {
                ClientOutput::Probe => {
                    let _ = udp.send_to(DISCOVERY_PROBE, ("127.0.0.1", self.discovery_port)).await;
                }
                ClientOutput::Connect(endpoint) => {
                    let blocked = self.outage.is_some_and(|(from, until)| now >= from && now < until);
                    let connected = if blocked {
                        None
                    } else {
                        TcpStream::connect((endpoint.host.as_str(), endpoint.port)).await.ok()
                    };
                    let more = match connected {
                        Some(s) => {
                            let _ = s.set_nodelay(true);
                            *stream = Some(s);
                            self.decoder = FrameDecoder::new();
                            self.client.on_connected(self.now())
                        }
                        None => self.client.on_connect_failed(self.now()),
                    };
                    queue.extend(more);
                }
                ClientOutput::Send(envelope) => {
                    let Some(s) = stream.as_mut() else { continue };
                    let frame = encode(&envelope).expect("client envelopes encode");
                    if s.write_all(&frame).await.is_err() {
                        *stream = None;
                        queue.extend(self.client.on_disconnected(self.now()));
                    }
                }
                ClientOutput::Disconnect => *stream = None,
                ClientOutput::Event(event) => self.event(event),
            }
        }
        self.publish();
    }

    async fn run(mut self, start_at: u64, mut stop: watch::Receiver<bool>) -> Outcome {
        let udp = UdpSocket::bind("127.0.0.1:0").await.expect("bind udp");
        let mut stream: Option<TcpStream> = None;
        let mut buf = vec![0u8; 64 * 1024];
        let mut udp_buf = [0u8; 512];

        tokio::time::sleep(Duration::from_millis(start_at.saturating_sub(self.now()))).await;
        let out = self.client.start(self.now());
        self.apply(out, &mut stream, &udp).await;
        let mut bot_at = self.now() + self.next_bot_delay();
        let mut outage_pending = self.outage.map(|(from, _)| from);

        loop {
            let now = self.now();
            let mut wake = bot_at;
            if let Some(d) = self.client.next_deadline() {
                wake = wake.min(d);
            }
            if let Some(t) = outage_pending {
                wake = wake.min(t);
            }
            let sleep = tokio::time::sleep(Duration::from_millis(wake.saturating_sub(now)));
            tokio::select! {
                _ = stop.changed() => break,
                read = async {
                    match stream.as_mut() {
                        Some(s) => s.read(&mut buf).await,
                        None => std::future::pending().await,
                    }
                } => {
                    match read {
                        Ok(0) | Err(_) => {
                            stream = None;
                            let out = self.client.on_disconnected(self.now());
                            self.apply(out, &mut stream, &udp).await;
                        }
                        Ok(n) => {
                            self.decoder.push(&buf[..n]);
                            while let Ok(Some(envelope)) = self.decoder.next_frame() {
                                if matches!(envelope.body, datacube::protocol::Body::FullState { state: Some(_) }) {
                                    self.outcome_counts.0 += 1;
                                }
                                let out = self.client.on_envelope(envelope, self.now());
                                self.apply(out, &mut stream, &udp).await;
                            }
                        }
                    }
                }
                reply = udp.recv_from(&mut udp_buf) => {
                    if let Ok((n, from)) = reply {
                        let out = self.client.on_discovery_reply(&from.ip().to_string(), &udp_buf[..n], self.now());
                        self.apply(out, &mut stream, &udp).await;
                    }
                }
                _ = sleep => {
                    let now = self.now();
                    if outage_pending.is_some_and(|t| now >= t) {
                        outage_pending = None;
                        if stream.take().is_some() {
                            let out = self.client.on_disconnected(now);
                            self.apply(out, &mut stream, &udp).await;
                        }
                    }
                    if self.client.next_deadline().is_some_and(|d| now >= d) {
                        let out = self.client.tick(now);
                        self.apply(out, &mut stream, &udp).await;
                    }
                    if now >= bot_at {
                        if let Some(out) = self.bot_act_outputs() {
                            self.apply(out, &mut stream, &udp).await;
                        }
                        bot_at = now + self.next_bot_delay();
                    }
                }
            }
        }
        if let Some(mut s) = stream.take() {
            let _ = s.shutdown().await;
        }
        let (full_states, joins, gaps) = self.outcome_counts;
        Outcome {
            client: self.client,
            full_states,
            joins,
            gaps,
            failure: self.failure,
        }
    }

    fn bot_act_outputs(&mut self) -> Option<Vec<ClientOutput>> {
        let brain = self.brain.as_mut()?;
        if self.client.phase() != ClientPhase::Synced || !self.client.is_connected() {
            return None;
        }
        let ops = self.ops;
        self.tally
            .submitted
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| (n < ops).then_some(n + 1))
            .ok()?;
        let me = self.client.client_id().cloned()?;
        let now = self.started.elapsed().as_millis() as u64;
        let op: OpPayload = brain.next_op(self.client.replica(), &me, now);
        match self.client.submit(op) {
            Ok((_, out)) => Some(out),
            Err(_) => {
                self.tally.submitted.fetch_sub(1, Ordering::SeqCst);
                None
            }
        }
    }
}

/// Runs `scenario` against a loopback server and reports once every client
/// has caught up with the server (or the time limit passes).
pub async fn run_over_sockets(scenario: &Scenario, data_dir: &std::path::Path) -> Result<SimReport, ServeError> {
    check_supported(scenario).map_err(ServeError::BadConfig)?;
    let config = ServeConfig {
        seed: scenario.seed,
        individuals: scenario.individuals,
        capacity: scenario.capacity,
        session_id: Some(format!("loopback-{}", scenario.seed)),
        ..ServeConfig::ephemeral(data_dir)
    };
    let handle = serve::start(config).await?;
    let dataset = Arc::new(generate_population(&PopulationSpec {
        individuals: scenario.individuals,
        seed: scenario.seed,
        ..PopulationSpec::default()
    }));

    let mut roles: Vec<(u64, Role)> = Vec::new();
    roles.extend((0..scenario.participants).map(|i| (i as u64, Role::Participant)));
    roles.extend((0..scenario.observers).map(|i| ((scenario.participants + i) as u64, Role::Observer)));
    for join in &scenario.joins {
        roles.extend(std::iter::repeat_n((join.at_ms, join.role), join.count));
    }

    let started = Instant::now();
    let tally = Arc::new(Tally::default());
    let progress = Arc::new(Mutex::new(vec![
        Progress { phase: ClientPhase::Idle, seq: 0, connected: false };
        roles.len()
    ]));
    let (stop_tx, stop_rx) = watch::channel(false);
    let mut world = ChaCha8Rng::seed_from_u64(scenario.seed ^ 0x5_eed0_fa11);
    let mut tasks = Vec::new();
    let mut languages = Vec::new();
    for (index, (start_at, role)) in roles.iter().copied().enumerate() {
        let language = scenario.languages[index % scenario.languages.len()];
        languages.push(language);
        let local_from_world = RigidTransform::new(
            UnitQuat::from_euler_angles(
                world.random_range(-0.2..0.2),
                world.random_range(-3.1..3.1),
                world.random_range(-0.2..0.2),
            ),
            Vec3::new(world.random_range(-5.0..5.0), world.random_range(-1.0..1.0), world.random_range(-5.0..5.0)),
        );
        let seed = scenario.seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let driver = Driver {
            index,
            client: Client::new(
                ClientConfig::new(role).with_language(language),
                Box::new(SimulatedRoom::new(room_landmarks(), local_from_world)),
            ),
            brain: (role == Role::Participant).then(|| BotBrain::new(seed, dataset.clone())),
            rng: ChaCha8Rng::seed_from_u64(seed),
            started,
            discovery_port: handle.discovery_addr.port(),
            ops: scenario.ops,
            op_interval_ms: scenario.op_interval_ms,
            tally: tally.clone(),
            progress: progress.clone(),
            outage: scenario
                .disconnects
                .iter()
                .find(|d| d.client == index)
                .map(|d| (d.at_ms, d.at_ms + d.duration_ms)),
            outcome_counts: (0, 0, 0),
            failure: None,
            decoder: FrameDecoder::new(),
        };
        tasks.push(tokio::spawn(driver.run(start_at, stop_rx.clone())));
    }

    let script_end = roles.iter().map(|(at, _)| *at).chain(scenario.disconnects.iter().map(|d| d.at_ms + d.duration_ms)).max().unwrap_or(0);
    let deadline = started + Duration::from_millis(scenario.max_virtual_ms);
    let mut quiescent = false;
    let mut peak = 0;
    let mut stable_polls = 0;
    let mut last_seq = 0;
    while Instant::now() < deadline {
        tokio::time::sleep(Duration::from_millis(50)).await;
        let Some(inspection) = handle.inspect().await else { break };
        peak = peak.max(inspection.participants);
        let seq = inspection.state.server_seq;
        let budget_done = tally.submitted.load(Ordering::SeqCst) >= scenario.ops
            || roles.iter().enumerate().all(|(i, (_, role))| {
                *role != Role::Participant || progress.lock().unwrap()[i].phase == ClientPhase::Stopped
            });
        let caught_up = progress.lock().unwrap().iter().all(|p| match p.phase {
            ClientPhase::Stopped => true,
            ClientPhase::Synced => p.connected && p.seq == seq,
            _ => false,
        });
        let settled = budget_done && caught_up && started.elapsed().as_millis() as u64 >= script_end;
        stable_polls = if settled && seq == last_seq { stable_polls + 1 } else { 0 };
        last_seq = seq;
        if stable_polls >= 3 {
            quiescent = true;
            break;
        }
    }
    let _ = stop_tx.send(true);
    let mut outcomes = Vec::new();
    for task in tasks {
        outcomes.push(task.await.expect("client task panicked"));
    }
    let inspection = handle.inspect().await.expect("hub alive");
    let virtual_ms = started.elapsed().as_millis() as u64;
    let _ = handle.shutdown().await;

    let canonical_digest = state_digest(&inspection.state);
    let log: Option<Vec<OpPayload>> = (inspection.log.first().map(|(s, _)| *s) == Some(1))
        .then(|| inspection.log.iter().map(|(_, op)| op.clone()).collect());
    let clients = outcomes
        .into_iter()
        .enumerate()
        .map(|(index, o)| {
            let digest = o.client.digest();
            let divergence = match (&log, o.client.phase() == ClientPhase::Synced && digest != canonical_digest) {
                (Some(log), true) => {
                    let (base, applied) = o.client.history();
                    first_divergence(log, base, applied, o.client.replica())
                }
                _ => None,
            };
            ClientSummary {
                index,
                role: roles[index].1,
                language: languages[index],
                client_id: o.client.client_id().cloned(),
                phase: o.client.phase(),
                server_seq: o.client.replica().server_seq,
                digest,
                full_states: o.full_states,
                rejoins: o.joins.saturating_sub(1),
                gaps: o.gaps,
                failure: o.failure,
                divergence,
            }
        })
        .collect();
    let rejections = tally.rejections.lock().unwrap().clone();
    Ok(SimReport {
        scenario: format!("{} (loopback sockets)", scenario.name),
        seed: scenario.seed,
        ops_submitted: tally.submitted.load(Ordering::SeqCst),
        ops_acked: tally.acked.load(Ordering::SeqCst),
        ops_ordered: inspection.state.server_seq,
        rejections,
        joins: inspection.stats.joins,
        expired: inspection.stats.expired,
        peak_participants: peak,
        virtual_ms,
        quiescent,
        canonical_digest,
        clients,
    })
}
