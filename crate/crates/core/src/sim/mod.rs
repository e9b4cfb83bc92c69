//! Deterministic in-process session simulation: one server, many bot
//! clients, and a seeded network with latency, link loss and scripted
//! faults, all driven by a virtual clock.
//!
//! Frames travel through the real wire encoding, so a run exercises the
//! same code paths as a socket deployment, minus the sockets.

mod bots;
mod scenario;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use self::bots::BotBrain;
pub use self::scenario::{
    Corrupt, Disconnect, Gap, LateJoin, Scenario, ScenarioParseError, Silence, SimNetConfig,
};

use crate::client::{
    Client, ClientConfig, ClientError, ClientEvent, ClientOutput, ClientPhase, ServerEndpoint,
    SimulatedRoom,
};
use crate::dataset::synth::{generate_population, PopulationSpec};
use crate::localization::LanguageCode;
use crate::protocol::{
    apply_op_in_place, encode, state_digest, Body, ClientId, FrameDecoder, OpPayload, Role,
    SessionState,
};
use crate::server::{ConnId, Server, ServerConfig, ServerOutput};
use crate::viewmath::{AnchorPoint, AnchorSet, RigidTransform, UnitQuat, Vec3};

/// Where a client's history first departs from the canonical op log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    pub seq: u64,
    pub detail: String,
}

/// Replays `log` (op `k` at index `k - 1`) from the initial state alongside
/// a client's last FullState `base` and the ops it applied since, and
/// reports the first sequence number at which the two disagree.
pub fn first_divergence(
    log: &[OpPayload],
    base: &SessionState,
    applied: &[(u64, OpPayload)],
    replica: &SessionState,
) -> Option<Divergence> {
    let mut canonical = SessionState::initial();
    let base_seq = base.server_seq;
    if base_seq as usize > log.len() {
        return Some(Divergence {
            seq: log.len() as u64 + 1,
            detail: format!("client state claims seq {base_seq}, log ends at {}", log.len()),
        });
    }
    for (index, op) in log[..base_seq as usize].iter().enumerate() {
        apply_op_in_place(&mut canonical, index as u64 + 1, op).expect("log is gapless");
    }
    if state_digest(&canonical) != state_digest(base) {
        return Some(Divergence {
            seq: base_seq,
            detail: format!("FullState at seq {base_seq} differs from the replayed log"),
        });
    }
    let mut own = base.clone();
    for (seq, op) in applied {
        let Some(expected) = log.get(*seq as usize - 1) else {
            return Some(Divergence {
                seq: *seq,
                detail: format!("client applied seq {seq} beyond the log"),
            });
        };
        if expected != op {
            return Some(Divergence {
                seq: *seq,
                detail: format!("client applied {} where the log has {}", op.name(), expected.name()),
            });
        }
        if apply_op_in_place(&mut own, *seq, op).is_err()
            || apply_op_in_place(&mut canonical, *seq, expected).is_err()
        {
            return Some(Divergence {
                seq: *seq,
                detail: format!("seq {seq} applied out of order"),
            });
        }
        if state_digest(&own) != state_digest(&canonical) {
            return Some(Divergence {
                seq: *seq,
                detail: format!("states differ after seq {seq}"),
            });
        }
    }
    if state_digest(&own) != state_digest(replica) {
        return Some(Divergence {
            seq: own.server_seq,
            detail: "replica differs from its own recorded history".into(),
        });
    }
    if (own.server_seq as usize) < log.len() {
        return Some(Divergence {
            seq: own.server_seq + 1,
            detail: format!("client stopped at seq {}, log reaches {}", own.server_seq, log.len()),
        });
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientSummary {
    pub index: usize,
    pub role: Role,
    pub language: LanguageCode,
    pub client_id: Option<ClientId>,
    pub phase: ClientPhase,
    pub server_seq: u64,
    pub digest: u64,
    pub full_states: u32,
    pub rejoins: u32,
    pub gaps: u32,
    pub failure: Option<ClientError>,
    pub divergence: Option<Divergence>,
}

impl ClientSummary {
    fn acceptable(&self, canonical: u64) -> bool {
        match (&self.phase, &self.failure) {
            (ClientPhase::Stopped, Some(ClientError::SessionFull)) => true,
            (ClientPhase::Synced, None) => self.digest == canonical,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub scenario: String,
    pub seed: u64,
    pub ops_submitted: usize,
    pub ops_acked: usize,
    pub ops_ordered: u64,
    pub rejections: BTreeMap<String, u64>,
    pub joins: u64,
    pub expired: u64,
    pub peak_participants: usize,
    pub virtual_ms: u64,
    pub quiescent: bool,
    pub canonical_digest: u64,
    pub clients: Vec<ClientSummary>,
}

impl SimReport {
    pub fn passed(&self) -> bool {
        self.quiescent && self.clients.iter().all(|c| c.acceptable(self.canonical_digest))
    }

    pub fn session_full_rejections(&self) -> usize {
        self.clients
            .iter()
            .filter(|c| c.failure == Some(ClientError::SessionFull))
            .count()
    }

    pub fn first_divergence(&self) -> Option<(usize, &Divergence)> {
        self.clients
            .iter()
            .filter_map(|c| c.divergence.as_ref().map(|d| (c.index, d)))
            .min_by_key(|(_, d)| d.seq)
    }

    /// Plain-text report; identical inputs give byte-identical output.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario: {}", self.scenario);
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "virtual time: {} ms", self.virtual_ms);
        let _ = writeln!(s, "ops submitted: {}", self.ops_submitted);
        let _ = writeln!(s, "ops acknowledged: {}", self.ops_acked);
        let _ = writeln!(s, "ops ordered: {}", self.ops_ordered);
        let seconds = (self.virtual_ms.max(1)) as f64 / 1000.0;
        let _ = writeln!(s, "throughput: {:.1} ops/s (virtual)", self.ops_ordered as f64 / seconds);
        let _ = writeln!(s, "joins: {}  expired: {}  peak participants: {}", self.joins, self.expired, self.peak_participants);
        if self.rejections.is_empty() {
            let _ = writeln!(s, "rejections: none");
        } else {
            let list: Vec<String> = self.rejections.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = writeln!(s, "rejections: {}", list.join(", "));
        }
        let _ = writeln!(s, "quiescent: {}", if self.quiescent { "yes" } else { "no" });
        let _ = writeln!(s, "canonical digest: {:016x}", self.canonical_digest);
        for c in &self.clients {
            let id = c.client_id.as_ref().map_or("-".to_string(), |id| id.to_string());
            let verdict = if c.acceptable(self.canonical_digest) { "ok" } else { "MISMATCH" };
            let _ = write!(
                s,
                "client {} {id} {:?} {} {:?} seq={} digest={:016x} fullstates={} rejoins={} gaps={}",
                c.index, c.role, c.language, c.phase, c.server_seq, c.digest, c.full_states, c.rejoins, c.gaps
            );
            if let Some(f) = &c.failure {
                let _ = write!(s, " failure=\"{f}\"");
            }
            let _ = writeln!(s, " {verdict}");
            if let Some(d) = &c.divergence {
                let _ = writeln!(s, "  divergence at seq {}: {}", d.seq, d.detail);
            }
        }
        if let Some((index, d)) = self.first_divergence() {
            let _ = writeln!(s, "first diverging seq: {} (client {index})", d.seq);
        }
        let _ = writeln!(s, "result: {}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Start(usize),
    BotAct(usize),
    ClientTimer(usize),
    ServerTimer,
    ConnectArrive { client: usize, conn: ConnId },
    ConnectResult { client: usize, conn: ConnId, ok: bool },
    ToServer { conn: ConnId, frame: Vec<u8> },
    ToClient { client: usize, conn: ConnId, frame: Vec<u8> },
    ServerClosed { client: usize, conn: ConnId },
    ClientClosed { conn: ConnId },
    LinkBreak { client: usize, outage_ms: u64 },
    DropWindow,
    Silence { client: usize, until: u64 },
}

impl Event {
    fn in_network(&self) -> bool {
        matches!(
            self,
            Event::ConnectArrive { .. }
                | Event::ConnectResult { .. }
                | Event::ToServer { .. }
                | Event::ToClient { .. }
                | Event::ServerClosed { .. }
                | Event::ClientClosed { .. }
        )
    }
}

struct SimClient {
    client: Client,
    brain: Option<BotBrain>,
    role: Role,
    language: LanguageCode,
    started: bool,
    conn: Option<ConnId>,
    outage_until: u64,
    silent_until: u64,
    corrupt_at: Vec<u64>,
    gap_seqs: BTreeSet<u64>,
    timer_at: Option<u64>,
    full_states: u32,
    joins: u32,
    gaps: u32,
    failure: Option<ClientError>,
}

/// The room every simulated device stands in.
pub fn room_landmarks() -> AnchorSet {
    AnchorSet::new(vec![
        AnchorPoint::new("table", Vec3::new(0.0, 0.75, 0.0)),
        AnchorPoint::new("door", Vec3::new(3.2, 1.0, -0.4)),
        AnchorPoint::new("window", Vec3::new(-2.0, 1.5, -3.0)),
        AnchorPoint::new("shelf", Vec3::new(1.0, 1.8, 2.5)),
    ])
    .expect("landmarks are well spread")
}

pub struct Simulation {
    scenario: Scenario,
    now: u64,
    counter: u64,
    events: BinaryHeap<Reverse<(u64, u64, Event)>>,
    in_flight: usize,
    net_rng: ChaCha8Rng,
    link_clock: BTreeMap<(ConnId, bool), u64>,
    server: Server,
    server_live: BTreeSet<ConnId>,
    server_decoders: BTreeMap<ConnId, FrameDecoder>,
    conn_owner: BTreeMap<ConnId, usize>,
    next_conn: u64,
    server_timer_at: Option<u64>,
    clients: Vec<SimClient>,
    canonical_log: Vec<OpPayload>,
    ops_submitted: usize,
    ops_acked: usize,
    rejections: BTreeMap<String, u64>,
    peak_participants: usize,
    script_end: u64,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Self {
        let seed = scenario.seed;
        let dataset = Arc::new(generate_population(&PopulationSpec {
            individuals: scenario.individuals,
            seed,
            ..PopulationSpec::default()
        }));
        let mut config = ServerConfig::new(format!("sim-{seed}"));
        config.capacity = scenario.capacity;
        let mut server = Server::new(config);
        server.load_dataset(dataset.clone());

        let mut world_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5_eed0_fa11);
        let mut roles: Vec<(u64, Role)> = Vec::new();
        roles.extend((0..scenario.participants).map(|i| (i as u64, Role::Participant)));
        roles.extend((0..scenario.observers).map(|i| ((scenario.participants + i) as u64, Role::Observer)));
        for join in &scenario.joins {
            roles.extend(std::iter::repeat_n((join.at_ms, join.role), join.count));
        }

        let mut clients = Vec::new();
        let mut starts = Vec::new();
        for (index, (start_at, role)) in roles.into_iter().enumerate() {
            let language = scenario.languages[index % scenario.languages.len()];
            let local_from_world = RigidTransform::new(
                UnitQuat::from_euler_angles(
                    world_rng.random_range(-0.2..0.2),
                    world_rng.random_range(-3.1..3.1),
                    world_rng.random_range(-0.2..0.2),
                ),
                Vec3::new(
                    world_rng.random_range(-5.0..5.0),
                    world_rng.random_range(-1.0..1.0),
                    world_rng.random_range(-5.0..5.0),
                ),
            );
            let config = ClientConfig::new(role)
                .with_endpoint(ServerEndpoint::new("sim", 47800))
                .with_language(language);
            let brain = (role == Role::Participant).then(|| {
                let bot_seed = seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                BotBrain::new(bot_seed, dataset.clone())
            });
            clients.push(SimClient {
                client: Client::new(config, Box::new(SimulatedRoom::new(room_landmarks(), local_from_world))),
                brain,
                role,
                language,
                started: false,
                conn: None,
                outage_until: 0,
                silent_until: 0,
                corrupt_at: Vec::new(),
                gap_seqs: BTreeSet::new(),
                timer_at: None,
                full_states: 0,
                joins: 0,
                gaps: 0,
                failure: None,
            });
            starts.push(start_at);
        }

        let mut sim = Self {
            net_rng: ChaCha8Rng::seed_from_u64(seed),
            scenario,
            now: 0,
            counter: 0,
            events: BinaryHeap::new(),
            in_flight: 0,
            link_clock: BTreeMap::new(),
            server,
            server_live: BTreeSet::new(),
            server_decoders: BTreeMap::new(),
            conn_owner: BTreeMap::new(),
            next_conn: 1,
            server_timer_at: None,
            clients,
            canonical_log: Vec::new(),
            ops_submitted: 0,
            ops_acked: 0,
            rejections: BTreeMap::new(),
            peak_participants: 0,
            script_end: 0,
        };
        sim.capture_log();
        for (index, at) in starts.into_iter().enumerate() {
            sim.schedule(at, Event::Start(index));
            sim.script_end = sim.script_end.max(at);
        }
        let scenario = sim.scenario.clone();
        for d in &scenario.disconnects {
            sim.schedule(d.at_ms, Event::LinkBreak { client: d.client, outage_ms: d.duration_ms });
            sim.script_end = sim.script_end.max(d.at_ms + d.duration_ms);
        }
        for s in &scenario.silences {
            sim.schedule(s.at_ms, Event::Silence { client: s.client, until: s.at_ms + s.duration_ms });
            sim.script_end = sim.script_end.max(s.at_ms + s.duration_ms);
        }
        for g in &scenario.gaps {
            sim.clients[g.client].gap_seqs.insert(g.at_seq);
        }
        for c in &scenario.corruptions {
            sim.clients[c.client].corrupt_at.push(c.at_ms);
            sim.script_end = sim.script_end.max(c.at_ms);
        }
        if scenario.network.drop_probability > 0.0 {
            sim.schedule(scenario.network.drop_window_ms, Event::DropWindow);
        }
        sim
    }

    pub fn server(&self) -> &Server {
        &self.server
    }

    pub fn client(&self, index: usize) -> &Client {
        &self.clients[index].client
    }

    pub fn canonical_log(&self) -> &[OpPayload] {
        &self.canonical_log
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    fn schedule(&mut self, at: u64, event: Event) {
        if event.in_network() {
            self.in_flight += 1;
        }
        self.counter += 1;
        self.events.push(Reverse((at, self.counter, event)));
    }

    /// Arrival time on a FIFO link: a sampled latency, never overtaking
    /// an earlier frame on the same link.
    fn link_arrival(&mut self, conn: ConnId, upstream: bool) -> u64 {
        let [lo, hi] = self.scenario.network.latency_ms;
        let latency = self.net_rng.random_range(lo..=hi);
        let clock = self.link_clock.entry((conn, upstream)).or_insert(0);
        *clock = (*clock).max(self.now + latency);
        *clock
    }

    fn latency(&mut self) -> u64 {
        let [lo, hi] = self.scenario.network.latency_ms;
        self.net_rng.random_range(lo..=hi)
    }

    fn budget_done(&self) -> bool {
        self.ops_submitted >= self.scenario.ops
            || self
                .clients
                .iter()
                .all(|c| c.brain.is_none() || (c.started && c.client.phase() == ClientPhase::Stopped))
    }

    fn settled(&self) -> bool {
        self.in_flight == 0
            && self.now >= self.script_end
            && !self.server.has_pending_poses()
            && self.clients.iter().all(|c| {
                c.started
                    && self.now >= c.outage_until
                    && self.now >= c.silent_until
                    && match c.client.phase() {
                        ClientPhase::Stopped => c.conn.is_none(),
                        ClientPhase::Synced => c.conn.is_some_and(|conn| self.server_live.contains(&conn)),
                        _ => false,
                    }
            })
            && self.server_live.iter().all(|conn| {
                self.conn_owner
                    .get(conn)
                    .is_some_and(|&i| self.clients[i].conn == Some(*conn))
            })
    }

    /// Processes the next event. Returns false once the queue is empty or
    /// the virtual time limit is reached.
    pub fn step(&mut self) -> bool {
        let Some(Reverse((at, _, _))) = self.events.peek() else { return false };
        if *at > self.scenario.max_virtual_ms {
            return false;
        }
        let Reverse((at, _, event)) = self.events.pop().expect("peeked");
        self.now = at;
        if event.in_network() {
            self.in_flight -= 1;
        }
        self.handle(event);
        self.peak_participants = self.peak_participants.max(self.server.participant_count());
        true
    }

    /// Whether the op budget is spent and every client has settled.
    pub fn is_quiescent(&self) -> bool {
        self.budget_done() && self.settled()
    }

    /// Runs to quiescence (or the virtual time limit) and reports.
    pub fn run(mut self) -> SimReport {
        let mut quiescent = self.is_quiescent();
        while !quiescent && self.step() {
            quiescent = self.is_quiescent();
        }
        self.report(quiescent)
    }

    fn report(self, quiescent: bool) -> SimReport {
        let canonical_digest = state_digest(self.server.state());
        let clients = self
            .clients
            .iter()
            .enumerate()
            .map(|(index, c)| {
                let (base, applied) = c.client.history();
                let digest = c.client.digest();
                let divergence = (c.client.phase() == ClientPhase::Synced && digest != canonical_digest)
                    .then(|| first_divergence(&self.canonical_log, base, applied, c.client.replica()))
                    .flatten();
                ClientSummary {
                    index,
                    role: c.role,
                    language: c.language,
                    client_id: c.client.client_id().cloned(),
                    phase: c.client.phase(),
                    server_seq: c.client.replica().server_seq,
                    digest,
                    full_states: c.full_states,
                    rejoins: c.joins.saturating_sub(1),
                    gaps: c.gaps,
                    failure: c.failure.clone(),
                    divergence,
                }
            })
            .collect();
        let stats = self.server.stats();
        SimReport {
            scenario: self.scenario.name.clone(),
            seed: self.scenario.seed,
            ops_submitted: self.ops_submitted,
            ops_acked: self.ops_acked,
            ops_ordered: self.server.state().server_seq,
            rejections: self.rejections.clone(),
            joins: stats.joins,
            expired: stats.expired,
            peak_participants: self.peak_participants,
            virtual_ms: self.now,
            quiescent,
            canonical_digest,
            clients,
        }
    }

    fn capture_log(&mut self) {
        let known = self.canonical_log.len() as u64;
        let fresh: Vec<OpPayload> = self
            .server
            .op_log()
            .filter(|(seq, _)| *seq > known)
            .map(|(_, op)| op.clone())
            .collect();
        self.canonical_log.extend(fresh);
        debug_assert_eq!(self.canonical_log.len() as u64, self.server.state().server_seq);
    }

    fn handle(&mut self, event: Event) {
        match event {
            Event::Start(i) => {
                self.clients[i].started = true;
                let out = self.clients[i].client.start(self.now);
                self.client_outputs(i, out);
                if self.clients[i].brain.is_some() {
                    let at = self.now + self.bot_delay();
                    self.schedule(at, Event::BotAct(i));
                }
            }
            Event::BotAct(i) => self.bot_act(i),
            Event::ClientTimer(i) => {
                if self.clients[i].timer_at == Some(self.now) {
                    self.clients[i].timer_at = None;
                    let out = self.clients[i].client.tick(self.now);
                    self.client_outputs(i, out);
                }
            }
            Event::ServerTimer => {
                if self.server_timer_at == Some(self.now) {
                    self.server_timer_at = None;
                    let out = self.server.tick(self.now);
                    self.server_outputs(out);
                }
            }
            Event::ConnectArrive { client, conn } => {
                let ok = self.now >= self.clients[client].outage_until;
                if ok {
                    self.server.connect(conn, self.now);
                    self.server_live.insert(conn);
                    self.server_decoders.insert(conn, FrameDecoder::new());
                    self.conn_owner.insert(conn, client);
                    self.rearm_server();
                }
                let at = self.now + self.latency();
                self.schedule(at, Event::ConnectResult { client, conn, ok });
            }
            Event::ConnectResult { client, conn, ok } => {
                if !ok {
                    let out = self.clients[client].client.on_connect_failed(self.now);
                    self.client_outputs(client, out);
                } else if self.clients[client].client.phase() == ClientPhase::Stopped {
                    let at = self.link_arrival(conn, true);
                    self.schedule(at, Event::ClientClosed { conn });
                } else {
                    self.clients[client].conn = Some(conn);
                    let out = self.clients[client].client.on_connected(self.now);
                    self.client_outputs(client, out);
                }
            }
            Event::ToServer { conn, frame } => {
                if !self.server_live.contains(&conn) {
                    return;
                }
                let decoder = self.server_decoders.get_mut(&conn).expect("live connection");
                decoder.push(&frame);
                let mut frames = Vec::new();
                loop {
                    match decoder.next_frame() {
                        Ok(Some(envelope)) => frames.push(Ok(envelope)),
                        Ok(None) => break,
                        Err(e) => {
                            let fatal = matches!(e, crate::protocol::ProtocolError::FrameTooLarge(_));
                            frames.push(Err(e));
                            if fatal {
                                break;
                            }
                        }
                    }
                }
                for frame in frames {
                    let out = match frame {
                        Ok(envelope) => self.server.receive(conn, envelope, self.now),
                        Err(e) => self.server.reject_frame(conn, &e, self.now),
                    };
                    self.server_outputs(out);
                }
            }
            Event::ToClient { client, conn, frame } => {
                if self.clients[client].conn != Some(conn) {
                    return;
                }
                let envelope = match crate::protocol::decode(&frame) {
                    Ok(envelope) => envelope,
                    Err(e) => {
                        log::error!("client {client} dropped an undecodable frame: {e}");
                        return;
                    }
                };
                if matches!(envelope.body, Body::FullState { state: Some(_) }) {
                    self.clients[client].full_states += 1;
                }
                let out = self.clients[client].client.on_envelope(envelope, self.now);
                self.client_outputs(client, out);
            }
            Event::ServerClosed { client, conn } => {
                if self.clients[client].conn == Some(conn) {
                    self.clients[client].conn = None;
                    let out = self.clients[client].client.on_disconnected(self.now);
                    self.client_outputs(client, out);
                }
            }
            Event::ClientClosed { conn } => {
                if self.server_live.remove(&conn) {
                    let out = self.server.disconnect(conn, self.now);
                    self.server_outputs(out);
                }
            }
            Event::LinkBreak { client, outage_ms } => {
                let c = &mut self.clients[client];
                c.outage_until = c.outage_until.max(self.now + outage_ms);
                if let Some(conn) = c.conn.take() {
                    log::debug!("link of client {client} breaks at {}", self.now);
                    if self.server_live.remove(&conn) {
                        let out = self.server.disconnect(conn, self.now);
                        self.server_outputs(out);
                    }
                    let out = self.clients[client].client.on_disconnected(self.now);
                    self.client_outputs(client, out);
                }
            }
            Event::DropWindow => {
                if self.budget_done() {
                    return;
                }
                let p = self.scenario.network.drop_probability;
                for client in 0..self.clients.len() {
                    if self.clients[client].conn.is_some() && self.net_rng.random_bool(p) {
                        self.schedule(self.now, Event::LinkBreak { client, outage_ms: 0 });
                    }
                }
                let at = self.now + self.scenario.network.drop_window_ms;
                self.schedule(at, Event::DropWindow);
            }
            Event::Silence { client, until } => {
                let c = &mut self.clients[client];
                c.silent_until = c.silent_until.max(until);
            }
        }
    }

    fn bot_delay(&mut self) -> u64 {
        let interval = self.scenario.op_interval_ms;
        self.net_rng.random_range(interval.div_ceil(2)..=interval + interval / 2)
    }

    fn bot_act(&mut self, i: usize) {
        if self.ops_submitted >= self.scenario.ops {
            return;
        }
        let now = self.now;
        let c = &mut self.clients[i];
        if c.client.phase() == ClientPhase::Stopped {
            return;
        }
        let mut outputs = None;
        if c.client.phase() == ClientPhase::Synced && c.conn.is_some() && now >= c.silent_until {
            let me = c.client.client_id().cloned().expect("synced clients have ids");
            let brain = c.brain.as_mut().expect("bots have brains");
            let op = brain.next_op(c.client.replica(), &me, now);
            if let Ok((_, out)) = c.client.submit(op) {
                self.ops_submitted += 1;
                outputs = Some(out);
            }
        }
        if let Some(out) = outputs {
            self.client_outputs(i, out);
        }
        let at = now + self.bot_delay();
        self.schedule(at, Event::BotAct(i));
    }

    fn client_outputs(&mut self, i: usize, outputs: Vec<ClientOutput>) {
        for output in outputs {
            match output {
                ClientOutput::Probe => {}
                ClientOutput::Connect(_) => {
                    let conn = ConnId(self.next_conn);
                    self.next_conn += 1;
                    let at = self.now + self.latency();
                    self.schedule(at, Event::ConnectArrive { client: i, conn });
                }
                ClientOutput::Send(envelope) => {
                    let Some(conn) = self.clients[i].conn else { continue };
                    if self.now < self.clients[i].silent_until {
                        continue;
                    }
                    let mut frame = encode(&envelope).expect("client envelopes encode");
                    let now = self.now;
                    let corrupt = &mut self.clients[i].corrupt_at;
                    if let Some(pos) = corrupt.iter().position(|&t| now >= t) {
                        corrupt.remove(pos);
                        frame[4] = b'#';
                    }
                    let at = self.link_arrival(conn, true);
                    self.schedule(at, Event::ToServer { conn, frame });
                }
                ClientOutput::Disconnect => {
                    if let Some(conn) = self.clients[i].conn.take() {
                        let at = self.link_arrival(conn, true);
                        self.schedule(at, Event::ClientClosed { conn });
                    }
                }
                ClientOutput::Event(event) => self.client_event(i, event),
            }
        }
        self.rearm_client(i);
    }

    fn client_event(&mut self, i: usize, event: ClientEvent) {
        let c = &mut self.clients[i];
        match event {
            ClientEvent::Joined { .. } => c.joins += 1,
            ClientEvent::Acked { .. } => self.ops_acked += 1,
            ClientEvent::Rejected { code, .. } => {
                *self.rejections.entry(format!("{code:?}")).or_default() += 1;
            }
            ClientEvent::GapDetected { .. } => c.gaps += 1,
            ClientEvent::Failed(error) => {
                let key = match &error {
                    ClientError::SessionFull => "SessionFull".to_string(),
                    other => format!("{other:?}"),
                };
                *self.rejections.entry(key).or_default() += 1;
                c.failure = Some(error);
            }
            ClientEvent::Synced { .. } => {}
        }
    }

    fn server_outputs(&mut self, outputs: Vec<ServerOutput>) {
        self.capture_log();
        for output in outputs {
            match output {
                ServerOutput::Send(conn, envelope) => {
                    let Some(&client) = self.conn_owner.get(&conn) else { continue };
                    if let (Body::Update { .. }, Some(seq)) = (&envelope.body, envelope.seq) {
                        if self.clients[client].gap_seqs.remove(&seq) {
                            log::debug!("dropping update {seq} to client {client}");
                            continue;
                        }
                    }
                    let frame = encode(&envelope).expect("server envelopes encode");
                    let at = self.link_arrival(conn, false);
                    self.schedule(at, Event::ToClient { client, conn, frame });
                }
                ServerOutput::Close(conn) => {
                    self.server_live.remove(&conn);
                    if let Some(&client) = self.conn_owner.get(&conn) {
                        let at = self.link_arrival(conn, false);
                        self.schedule(at, Event::ServerClosed { client, conn });
                    }
                }
            }
        }
        self.rearm_server();
    }

    fn rearm_client(&mut self, i: usize) {
        let Some(deadline) = self.clients[i].client.next_deadline() else { return };
        let deadline = deadline.max(self.now);
        if self.clients[i].timer_at.is_none_or(|t| deadline < t) {
            self.clients[i].timer_at = Some(deadline);
            self.schedule(deadline, Event::ClientTimer(i));
        }
    }

    fn rearm_server(&mut self) {
        let Some(deadline) = self.server.next_deadline() else { return };
        let deadline = deadline.max(self.now);
        if self.server_timer_at.is_none_or(|t| deadline < t) {
            self.server_timer_at = Some(deadline);
            self.schedule(deadline, Event::ServerTimer);
        }
    }
}

/// Runs `scenario` to completion.
pub fn run_scenario(scenario: &Scenario) -> SimReport {
    Simulation::new(scenario.clone()).run()
}

#[cfg(test)]
mod tests;
