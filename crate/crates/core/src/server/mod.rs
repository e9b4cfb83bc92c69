//! The authoritative session host as a message-driven state machine.
//!
//! Transports feed it connection events and decoded envelopes together with
//! a millisecond timestamp and deliver the [`ServerOutput`]s it returns, in
//! order, per connection.

mod artifacts;
mod discovery;

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Arc;

pub use self::artifacts::{write_artifacts, ArtifactError, ArtifactSummary, Clock, FixedClock, SystemClock};
pub use self::discovery::{discovery_response, parse_discovery_reply, DiscoveryReply, DISCOVERY_PROBE};

use crate::dataset::Dataset;
use crate::protocol::{
    apply_op_in_place, Body, ClientId, DatasetRef, Envelope, ErrorCode, OpPayload, ProtocolError,
    Role, Sender, SessionState, PROTOCOL_VERSION,
};
use crate::viewmath::AnchorSet;

pub const DEFAULT_CAPACITY: usize = 6;
pub const HEARTBEAT_TIMEOUT_MS: u64 = 10_000;
/// Minimum spacing of broadcast poses per client (20 per second).
pub const POSE_MIN_INTERVAL_MS: u64 = 50;
pub const OP_LOG_CAPACITY: usize = 4096;

/// Transport-level connection handle, chosen by the transport.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConnId(pub u64);

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub session_id: String,
    /// Maximum concurrent participants; observers are not counted.
    pub capacity: usize,
    pub heartbeat_timeout_ms: u64,
    pub pose_min_interval_ms: u64,
}

impl ServerConfig {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            capacity: DEFAULT_CAPACITY,
            heartbeat_timeout_ms: HEARTBEAT_TIMEOUT_MS,
            pose_min_interval_ms: POSE_MIN_INTERVAL_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum ServerOutput {
    Send(ConnId, Envelope),
    /// Close the connection after flushing everything queued before it.
    Close(ConnId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MemberPhase {
    /// First participant; the session frame is awaited from it.
    DefiningAnchor,
    /// Welcomed, waiting for the frame to be defined by someone else.
    WaitingForAnchor,
    /// Has the anchor and a FullState; receives every Update.
    Synced,
}

#[derive(Debug, Clone)]
struct Member {
    id: ClientId,
    role: Role,
    phase: MemberPhase,
    joined_order: u64,
}

#[derive(Debug, Clone)]
struct Connection {
    member: Option<Member>,
    last_seen: u64,
}

#[derive(Debug, Clone)]
struct PendingPose {
    op: OpPayload,
    reqs: Vec<u64>,
}

/// Counters kept for logs and simulation reports.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServerStats {
    pub joins: u64,
    pub rejections: BTreeMap<String, u64>,
    pub ops_ordered: u64,
    pub poses_coalesced: u64,
    pub expired: u64,
}

#[derive(Debug)]
pub struct Server {
    config: ServerConfig,
    anchor: Option<AnchorSet>,
    connections: BTreeMap<ConnId, Connection>,
    next_client: u64,
    state: SessionState,
    op_log: VecDeque<(u64, OpPayload)>,
    pending_poses: BTreeMap<ConnId, PendingPose>,
    last_pose_sent: BTreeMap<ConnId, u64>,
    dataset: Option<Arc<Dataset>>,
    stats: ServerStats,
}

impl Server {
    pub fn new(config: ServerConfig) -> Self {
        Self {
            config,
            anchor: None,
            connections: BTreeMap::new(),
            next_client: 1,
            state: SessionState::initial(),
            op_log: VecDeque::with_capacity(OP_LOG_CAPACITY),
            pending_poses: BTreeMap::new(),
            last_pose_sent: BTreeMap::new(),
            dataset: None,
            stats: ServerStats::default(),
        }
    }

    pub fn session_id(&self) -> &str {
        &self.config.session_id
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn anchor(&self) -> Option<&AnchorSet> {
        self.anchor.as_ref()
    }

    pub fn dataset(&self) -> Option<&Arc<Dataset>> {
        self.dataset.as_ref()
    }

    pub fn stats(&self) -> &ServerStats {
        &self.stats
    }

    /// The most recent ordered ops, oldest first (diagnostics only).
    pub fn op_log(&self) -> impl Iterator<Item = &(u64, OpPayload)> {
        self.op_log.iter()
    }

    pub fn participant_count(&self) -> usize {
        self.members().filter(|m| m.role == Role::Participant).count()
    }

    pub fn clients(&self) -> Vec<(ClientId, Role)> {
        self.members().map(|m| (m.id.clone(), m.role)).collect()
    }

    pub fn connection_of(&self, client: &ClientId) -> Option<ConnId> {
        self.connections
            .iter()
            .find(|(_, c)| c.member.as_ref().is_some_and(|m| &m.id == client))
            .map(|(conn, _)| *conn)
    }

    fn members(&self) -> impl Iterator<Item = &Member> {
        self.connections.values().filter_map(|c| c.member.as_ref())
    }

    pub fn connect(&mut self, conn: ConnId, now: u64) {
        self.connections.insert(
            conn,
            Connection {
                member: None,
                last_seen: now,
            },
        );
    }

    /// Transport loss. Equivalent to a Leave without the closing handshake.
    pub fn disconnect(&mut self, conn: ConnId, now: u64) -> Vec<ServerOutput> {
        let mut out = Vec::new();
        self.drop_connection(conn, now, &mut out);
        out
    }

    /// A frame from `conn` failed to decode. Oversized frames leave the stream
    /// unusable, so that connection is closed.
    pub fn reject_frame(&mut self, conn: ConnId, error: &ProtocolError, now: u64) -> Vec<ServerOutput> {
        let mut out = Vec::new();
        if !self.connections.contains_key(&conn) {
            return out;
        }
        self.reject(conn, ErrorCode::SchemaViolation, None, error.to_string(), &mut out);
        if matches!(error, ProtocolError::FrameTooLarge(_)) {
            self.drop_connection(conn, now, &mut out);
            out.push(ServerOutput::Close(conn));
        }
        out
    }

    pub fn receive(&mut self, conn: ConnId, envelope: Envelope, now: u64) -> Vec<ServerOutput> {
        let mut out = Vec::new();
        let Some(connection) = self.connections.get_mut(&conn) else {
            return out;
        };
        connection.last_seen = now;
        let member = connection.member.clone();

        let claimed_ok = match (&member, &envelope.sender) {
            (None, Sender::Anonymous) => true,
            (Some(m), Sender::Client(id)) => &m.id == id,
            _ => false,
        };
        if !claimed_ok {
            let code = if member.is_none() {
                ErrorCode::NotJoined
            } else {
                ErrorCode::SchemaViolation
            };
            self.reject(conn, code, None, format!("sender `{}` does not match this connection", String::from(envelope.sender)), &mut out);
            return out;
        }

        match (envelope.body, member) {
            (Body::JoinRequest { role, protocol }, None) => self.join(conn, role, &protocol, &mut out),
            (Body::JoinRequest { .. }, Some(_)) => {
                self.reject(conn, ErrorCode::SchemaViolation, None, "already joined", &mut out)
            }
            (_, None) => self.reject(conn, ErrorCode::NotJoined, None, "join first", &mut out),
            (Body::AnchorUpload { anchor }, Some(m)) => self.anchor_upload(conn, &m, anchor, &mut out),
            (Body::SubmitOp { req, op }, Some(m)) => self.submit(conn, &m, req, op, now, &mut out),
            (Body::FullState { state: None }, Some(m)) => {
                if m.phase == MemberPhase::Synced {
                    out.push(self.full_state_to(conn));
                } else {
                    self.reject(conn, ErrorCode::NotSynced, None, "session frame not established yet", &mut out);
                }
            }
            (Body::Heartbeat, Some(_)) => {}
            (Body::Leave, Some(_)) => {
                self.drop_connection(conn, now, &mut out);
                out.push(ServerOutput::Close(conn));
            }
            (body, Some(_)) => self.reject(
                conn,
                ErrorCode::SchemaViolation,
                None,
                format!("{:?} is not accepted from clients", body.kind()),
                &mut out,
            ),
        }
        out
    }

    /// Periodic work: flushes coalesced poses that are due and expires
    /// silent connections.
    pub fn tick(&mut self, now: u64) -> Vec<ServerOutput> {
        let mut out = Vec::new();
        self.flush_poses(now, &mut out);
        self.sweep(now, &mut out);
        out
    }

    /// Expires every connection silent for longer than the heartbeat timeout.
    pub fn heartbeat_sweep(&mut self, now: u64) -> (Vec<ClientId>, Vec<ServerOutput>) {
        let mut out = Vec::new();
        let expired = self.sweep(now, &mut out);
        (expired, out)
    }

    /// Earliest time at which [`Server::tick`] has work to do.
    pub fn next_deadline(&self) -> Option<u64> {
        let pose = self
            .pending_poses
            .keys()
            .map(|conn| self.pose_due(*conn))
            .min();
        let expiry = self
            .connections
            .values()
            .map(|c| c.last_seen + self.config.heartbeat_timeout_ms + 1)
            .min();
        pose.into_iter().chain(expiry).min()
    }

    pub fn has_pending_poses(&self) -> bool {
        !self.pending_poses.is_empty()
    }

    /// Makes `dataset` the session's dataset, broadcast as a server op.
    pub fn load_dataset(&mut self, dataset: Arc<Dataset>) -> Vec<ServerOutput> {
        let op = OpPayload::LoadDataset {
            dataset: DatasetRef::of(&dataset),
        };
        self.dataset = Some(dataset);
        let mut out = Vec::new();
        self.order(Sender::Server, Vec::new(), op, &mut out);
        out
    }

    pub fn persist_artifacts(&self, root: &Path, clock: &dyn Clock) -> Result<ArtifactSummary, ArtifactError> {
        write_artifacts(
            root,
            &self.config.session_id,
            &self.state,
            self.dataset.as_deref(),
            clock,
        )
    }

    fn reject(
        &mut self,
        conn: ConnId,
        code: ErrorCode,
        req: Option<u64>,
        detail: impl Into<String>,
        out: &mut Vec<ServerOutput>,
    ) {
        *self.stats.rejections.entry(format!("{code:?}")).or_default() += 1;
        out.push(ServerOutput::Send(conn, Envelope::error(code, req, detail)));
    }

    fn join(&mut self, conn: ConnId, role: Role, protocol: &str, out: &mut Vec<ServerOutput>) {
        if protocol != PROTOCOL_VERSION {
            self.reject(
                conn,
                ErrorCode::VersionMismatch,
                None,
                format!("server speaks {PROTOCOL_VERSION}, client sent {protocol}"),
                out,
            );
            self.connections.remove(&conn);
            out.push(ServerOutput::Close(conn));
            return;
        }
        if role == Role::Participant && self.participant_count() >= self.config.capacity {
            self.reject(
                conn,
                ErrorCode::SessionFull,
                None,
                format!("session already has {} participants", self.config.capacity),
                out,
            );
            self.connections.remove(&conn);
            out.push(ServerOutput::Close(conn));
            return;
        }

        let number = self.next_client;
        self.next_client += 1;
        let id = ClientId::from_number(number);
        let defining = self.members().any(|m| m.phase == MemberPhase::DefiningAnchor);
        let phase = match (&self.anchor, role) {
            (Some(_), _) => MemberPhase::Synced,
            (None, Role::Participant) if !defining => MemberPhase::DefiningAnchor,
            (None, _) => MemberPhase::WaitingForAnchor,
        };
        log::info!("{id} joined as {role:?} ({phase:?})");
        self.stats.joins += 1;
        self.connections.get_mut(&conn).expect("connected").member = Some(Member {
            id: id.clone(),
            role,
            phase,
            joined_order: number,
        });
        out.push(ServerOutput::Send(conn, self.welcome(&id, phase == MemberPhase::DefiningAnchor)));
        if phase == MemberPhase::Synced {
            self.send_anchor_and_state(conn, out);
        }
    }

    fn welcome(&self, id: &ClientId, anchor_needed: bool) -> Envelope {
        Envelope::from_server(Body::Welcome {
            client_id: id.clone(),
            session_id: self.config.session_id.clone(),
            protocol: PROTOCOL_VERSION.to_string(),
            anchor_needed,
        })
    }

    fn full_state_to(&self, conn: ConnId) -> ServerOutput {
        ServerOutput::Send(
            conn,
            Envelope::from_server(Body::FullState {
                state: Some(self.state.clone()),
            }),
        )
    }

    fn send_anchor_and_state(&self, conn: ConnId, out: &mut Vec<ServerOutput>) {
        let anchor = self.anchor.clone().expect("anchor is set");
        out.push(ServerOutput::Send(conn, Envelope::from_server(Body::AnchorInfo { anchor })));
        out.push(self.full_state_to(conn));
    }

    fn set_phase(&mut self, conn: ConnId, phase: MemberPhase) {
        if let Some(member) = self.connections.get_mut(&conn).and_then(|c| c.member.as_mut()) {
            member.phase = phase;
        }
    }

    fn anchor_upload(&mut self, conn: ConnId, member: &Member, anchor: AnchorSet, out: &mut Vec<ServerOutput>) {
        if self.anchor.is_some() || member.phase != MemberPhase::DefiningAnchor {
            self.reject(conn, ErrorCode::AnchorAlreadySet, None, "the session frame is defined once, by the first participant", out);
            return;
        }
        log::info!("{} defined the session frame ({} anchors)", member.id, anchor.len());
        self.anchor = Some(anchor);
        self.set_phase(conn, MemberPhase::Synced);
        out.push(self.full_state_to(conn));
        let waiting: Vec<ConnId> = self
            .connections
            .iter()
            .filter(|(_, c)| c.member.as_ref().is_some_and(|m| m.phase == MemberPhase::WaitingForAnchor))
            .map(|(conn, _)| *conn)
            .collect();
        for other in waiting {
            self.set_phase(other, MemberPhase::Synced);
            self.send_anchor_and_state(other, out);
        }
    }

    fn submit(
        &mut self,
        conn: ConnId,
        member: &Member,
        req: u64,
        op: OpPayload,
        now: u64,
        out: &mut Vec<ServerOutput>,
    ) {
        if member.phase != MemberPhase::Synced {
            self.reject(conn, ErrorCode::NotSynced, Some(req), "session frame not established yet", out);
            return;
        }
        if member.role == Role::Observer && !op.is_pose() {
            self.reject(conn, ErrorCode::ObserverWriteDenied, Some(req), format!("observers may not submit {}", op.name()), out);
            return;
        }
        if matches!(op, OpPayload::LoadDataset { .. } | OpPayload::RemoveUserPose { .. }) {
            self.reject(conn, ErrorCode::SchemaViolation, Some(req), format!("{} is server-originated", op.name()), out);
            return;
        }
        if let Err(detail) = op.validate() {
            self.reject(conn, ErrorCode::SchemaViolation, Some(req), detail, out);
            return;
        }
        if op.claimed_client().is_some_and(|c| c != &member.id) {
            self.reject(conn, ErrorCode::SchemaViolation, Some(req), format!("{} may only speak for itself", member.id), out);
            return;
        }
        if op.is_pose() {
            self.submit_pose(conn, req, op, now, out);
        } else {
            self.order(Sender::Client(member.id.clone()), vec![req], op, out);
        }
    }

    fn pose_due(&self, conn: ConnId) -> u64 {
        self.last_pose_sent
            .get(&conn)
            .map_or(0, |t| t + self.config.pose_min_interval_ms)
    }

    fn submit_pose(&mut self, conn: ConnId, req: u64, op: OpPayload, now: u64, out: &mut Vec<ServerOutput>) {
        let pending = self.pending_poses.entry(conn).or_insert_with(|| PendingPose {
            op: op.clone(),
            reqs: Vec::new(),
        });
        if !pending.reqs.is_empty() {
            self.stats.poses_coalesced += 1;
        }
        pending.op = op;
        pending.reqs.push(req);
        if now >= self.pose_due(conn) {
            self.flush_pose(conn, now, out);
        }
    }

    fn flush_pose(&mut self, conn: ConnId, now: u64, out: &mut Vec<ServerOutput>) {
        let Some(pending) = self.pending_poses.remove(&conn) else { return };
        let Some(member) = self.connections.get(&conn).and_then(|c| c.member.clone()) else { return };
        self.last_pose_sent.insert(conn, now);
        self.order(Sender::Client(member.id), pending.reqs, pending.op, out);
    }

    fn flush_poses(&mut self, now: u64, out: &mut Vec<ServerOutput>) {
        let due: Vec<ConnId> = self
            .pending_poses
            .keys()
            .copied()
            .filter(|conn| now >= self.pose_due(*conn))
            .collect();
        for conn in due {
            self.flush_pose(conn, now, out);
        }
    }

    /// Assigns the next sequence number, applies the op to the canonical
    /// state and broadcasts the Update to every synced member.
    fn order(&mut self, origin: Sender, reqs: Vec<u64>, op: OpPayload, out: &mut Vec<ServerOutput>) {
        let seq = self.state.server_seq + 1;
        let warnings = apply_op_in_place(&mut self.state, seq, &op).expect("server order is gapless");
        for warning in warnings {
            log::warn!("op {seq} ({}) was a no-op: {warning:?}", op.name());
        }
        self.stats.ops_ordered += 1;
        if self.op_log.len() == OP_LOG_CAPACITY {
            self.op_log.pop_front();
        }
        self.op_log.push_back((seq, op.clone()));
        let update = Envelope::update(seq, origin, reqs, op);
        for (conn, connection) in &self.connections {
            if connection.member.as_ref().is_some_and(|m| m.phase == MemberPhase::Synced) {
                out.push(ServerOutput::Send(*conn, update.clone()));
            }
        }
    }

    fn drop_connection(&mut self, conn: ConnId, _now: u64, out: &mut Vec<ServerOutput>) {
        let Some(connection) = self.connections.remove(&conn) else { return };
        self.pending_poses.remove(&conn);
        self.last_pose_sent.remove(&conn);
        let Some(member) = connection.member else { return };
        log::info!("{} left", member.id);
        if self.state.user_poses.contains_key(&member.id) {
            self.order(Sender::Server, Vec::new(), OpPayload::RemoveUserPose { client: member.id.clone() }, out);
        }
        if member.phase == MemberPhase::DefiningAnchor {
            self.promote_definer(out);
        }
    }

    /// The frame definer left before uploading: the longest-waiting
    /// participant takes over, told so by a second Welcome.
    fn promote_definer(&mut self, out: &mut Vec<ServerOutput>) {
        let next = self
            .connections
            .iter()
            .filter_map(|(conn, c)| c.member.as_ref().map(|m| (*conn, m)))
            .filter(|(_, m)| m.role == Role::Participant && m.phase == MemberPhase::WaitingForAnchor)
            .min_by_key(|(_, m)| m.joined_order)
            .map(|(conn, m)| (conn, m.id.clone()));
        if let Some((conn, id)) = next {
            log::info!("{id} now defines the session frame");
            self.set_phase(conn, MemberPhase::DefiningAnchor);
            out.push(ServerOutput::Send(conn, self.welcome(&id, true)));
        }
    }

    fn sweep(&mut self, now: u64, out: &mut Vec<ServerOutput>) -> Vec<ClientId> {
        let timeout = self.config.heartbeat_timeout_ms;
        let silent: Vec<ConnId> = self
            .connections
            .iter()
            .filter(|(_, c)| now.saturating_sub(c.last_seen) > timeout)
            .map(|(conn, _)| *conn)
            .collect();
        let mut expired = Vec::new();
        for conn in silent {
            if let Some(member) = self.connections.get(&conn).and_then(|c| c.member.as_ref()) {
                log::info!("{} expired after {timeout} ms of silence", member.id);
                expired.push(member.id.clone());
                self.stats.expired += 1;
            }
            self.drop_connection(conn, now, out);
            out.push(ServerOutput::Close(conn));
        }
        expired
    }
}
