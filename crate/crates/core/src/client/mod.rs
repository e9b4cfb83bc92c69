//! The client as a message-driven state machine: discovery, join, anchor
//! alignment, replica maintenance and op submission, plus the per-client
//! presentation state that never leaves the device.
//!
//! Every entry point takes the current time in milliseconds and returns the
//! [`ClientOutput`]s the transport must carry out, in order.

mod input;
mod sensor;

use thiserror::Error;

pub use self::input::{
    arbitrate_input, controller_ray_offset, pointer_ray, InputMode, InputState, PointerEvent,
    PointerSource, Ray,
};
pub use self::sensor::{SimulatedRoom, SpatialSensor};

use crate::localization::LanguageCode;
use crate::protocol::{
    apply_op_in_place, state_digest, Body, ClientId, Envelope, ErrorCode, OpPayload, Role, Sender,
    SessionState, PROTOCOL_VERSION,
};
use crate::server::{parse_discovery_reply, DiscoveryReply};
use crate::viewmath::{alignment_residual_rms, solve_alignment, GeometryError, Pose, RigidTransform, UnitQuat};

pub const HEARTBEAT_INTERVAL_MS: u64 = 2_000;
pub const PROBE_INTERVAL_MS: u64 = 1_000;
pub const PROBE_ATTEMPTS: u32 = 3;
/// Largest RMS anchor residual (metres) accepted after alignment.
pub const ALIGNMENT_TOLERANCE: f64 = 0.05;
pub const RECONNECT_DELAY_MS: u64 = 1_000;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ServerEndpoint {
    pub host: String,
    pub port: u16,
}

impl ServerEndpoint {
    pub fn new(host: impl Into<String>, port: u16) -> Self {
        Self {
            host: host.into(),
            port,
        }
    }
}

/// How to choose among discovery responders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiscoveryPolicy {
    /// Connect to whichever server answers first.
    FirstResponder,
    /// Wait for this session; fall back to the first responder once the
    /// probes are exhausted.
    PreferSession(String),
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub role: Role,
    pub language: LanguageCode,
    /// Skips discovery when set.
    pub endpoint: Option<ServerEndpoint>,
    pub discovery: DiscoveryPolicy,
    pub heartbeat_interval_ms: u64,
}

impl ClientConfig {
    pub fn new(role: Role) -> Self {
        Self {
            role,
            language: LanguageCode::EN,
            endpoint: None,
            discovery: DiscoveryPolicy::FirstResponder,
            heartbeat_interval_ms: HEARTBEAT_INTERVAL_MS,
        }
    }

    pub fn with_endpoint(mut self, endpoint: ServerEndpoint) -> Self {
        self.endpoint = Some(endpoint);
        self
    }

    pub fn with_language(mut self, language: LanguageCode) -> Self {
        self.language = language;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClientPhase {
    Idle,
    Discovering,
    Connecting,
    AwaitingWelcome,
    AnchorDefining,
    Aligning,
    Synced,
    /// Lost the connection or a sequence gap; rebuilding from a FullState.
    Reconnecting,
    /// Left, or failed terminally (see the `Failed` event).
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClientError {
    #[error("no server answered {PROBE_ATTEMPTS} discovery probes")]
    NoServerFound,
    #[error("session is full")]
    SessionFull,
    #[error("server speaks a different protocol version")]
    VersionMismatch,
    #[error("anchor alignment residual {residual:.4} m exceeds {ALIGNMENT_TOLERANCE} m")]
    AlignmentFailed { residual: f64 },
    #[error("anchor alignment failed: {0}")]
    Geometry(#[from] GeometryError),
    #[error("client is not synced")]
    NotSynced,
    #[error("ray pointer mode needs a controller orientation")]
    MissingControllerOrientation,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientEvent {
    Joined { client_id: ClientId, session_id: String },
    Synced { seq: u64 },
    /// A submission was ordered at `seq`.
    Acked { req: u64, seq: u64 },
    Rejected { req: Option<u64>, code: ErrorCode, detail: String },
    GapDetected { expected: u64, got: u64 },
    Failed(ClientError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientOutput {
    /// Broadcast a discovery probe.
    Probe,
    Connect(ServerEndpoint),
    Send(Envelope),
    Disconnect,
    Event(ClientEvent),
}

/// Presentation state private to this device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalPrefs {
    pub language: LanguageCode,
    pub input: InputState,
}

pub struct Client {
    config: ClientConfig,
    sensor: Box<dyn SpatialSensor>,
    phase: ClientPhase,
    client_id: Option<ClientId>,
    session_id: Option<String>,
    endpoint: Option<ServerEndpoint>,
    connected: bool,
    alignment: Option<RigidTransform>,
    replica: SessionState,
    base: SessionState,
    applied: Vec<(u64, OpPayload)>,
    max_seen_seq: u64,
    prefs: LocalPrefs,
    head_pose: Pose,
    last_pointer_at: Option<u64>,
    next_req: u64,
    probes_sent: u32,
    next_probe_at: Option<u64>,
    replies: Vec<(ServerEndpoint, DiscoveryReply)>,
    next_heartbeat_at: Option<u64>,
    reconnect_at: Option<u64>,
}

impl std::fmt::Debug for Client {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Client")
            .field("phase", &self.phase)
            .field("client_id", &self.client_id)
            .field("server_seq", &self.replica.server_seq)
            .finish_non_exhaustive()
    }
}

impl Client {
    pub fn new(config: ClientConfig, sensor: Box<dyn SpatialSensor>) -> Self {
        let prefs = LocalPrefs {
            language: config.language,
            input: InputState::default(),
        };
        Self {
            config,
            sensor,
            phase: ClientPhase::Idle,
            client_id: None,
            session_id: None,
            endpoint: None,
            connected: false,
            alignment: None,
            replica: SessionState::initial(),
            base: SessionState::initial(),
            applied: Vec::new(),
            max_seen_seq: 0,
            prefs,
            head_pose: Pose::default(),
            last_pointer_at: None,
            next_req: 1,
            probes_sent: 0,
            next_probe_at: None,
            replies: Vec::new(),
            next_heartbeat_at: None,
            reconnect_at: None,
        }
    }

    pub fn phase(&self) -> ClientPhase {
        self.phase
    }

    pub fn role(&self) -> Role {
        self.config.role
    }

    pub fn client_id(&self) -> Option<&ClientId> {
        self.client_id.as_ref()
    }

    pub fn session_id(&self) -> Option<&str> {
        self.session_id.as_deref()
    }

    pub fn endpoint(&self) -> Option<&ServerEndpoint> {
        self.endpoint.as_ref()
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    /// Local frame → session frame; set once aligned.
    pub fn alignment(&self) -> Option<&RigidTransform> {
        self.alignment.as_ref()
    }

    pub fn replica(&self) -> &SessionState {
        &self.replica
    }

    pub fn digest(&self) -> u64 {
        state_digest(&self.replica)
    }

    /// Highest sequence number received in any Update or FullState.
    pub fn max_seen_seq(&self) -> u64 {
        self.max_seen_seq
    }

    /// The last FullState received and the ops applied on top of it.
    pub fn history(&self) -> (&SessionState, &[(u64, OpPayload)]) {
        (&self.base, &self.applied)
    }

    pub fn prefs(&self) -> LocalPrefs {
        self.prefs
    }

    /// Language is a local preference: nothing is sent.
    pub fn set_language(&mut self, language: LanguageCode) {
        self.prefs.language = language;
    }

    pub fn set_head_pose(&mut self, pose: Pose) {
        self.head_pose = pose;
    }

    pub fn head_pose(&self) -> &Pose {
        &self.head_pose
    }

    /// Feeds a pointer event to input arbitration. Events older than the
    /// last accepted one are ignored.
    pub fn pointer_event(&mut self, event: PointerEvent) -> InputMode {
        if self.last_pointer_at.is_some_and(|t| event.timestamp < t) {
            log::warn!("pointer event at {} arrived out of order", event.timestamp);
        } else {
            self.last_pointer_at = Some(event.timestamp);
            self.prefs.input = arbitrate_input(self.prefs.input, &event);
        }
        self.prefs.input.mode
    }

    /// Pointing ray in the session frame for the current input mode.
    pub fn current_ray(&self, controller: Option<&UnitQuat>) -> Result<Ray, ClientError> {
        if self.phase != ClientPhase::Synced {
            return Err(ClientError::NotSynced);
        }
        let alignment = self.alignment.as_ref().ok_or(ClientError::NotSynced)?;
        pointer_ray(self.prefs.input.mode, &self.head_pose, controller, alignment)
            .ok_or(ClientError::MissingControllerOrientation)
    }

    /// Earliest time at which [`Client::tick`] has work to do.
    pub fn next_deadline(&self) -> Option<u64> {
        [self.next_probe_at, self.next_heartbeat_at, self.reconnect_at]
            .into_iter()
            .flatten()
            .min()
    }

    pub fn start(&mut self, now: u64) -> Vec<ClientOutput> {
        let mut out = Vec::new();
        match self.config.endpoint.clone() {
            Some(endpoint) => self.connect_to(endpoint, &mut out),
            None => self.begin_discovery(now, &mut out),
        }
        out
    }

    fn begin_discovery(&mut self, now: u64, out: &mut Vec<ClientOutput>) {
        self.phase = ClientPhase::Discovering;
        self.probes_sent = 1;
        self.replies.clear();
        self.next_probe_at = Some(now + PROBE_INTERVAL_MS);
        out.push(ClientOutput::Probe);
    }

    fn connect_to(&mut self, endpoint: ServerEndpoint, out: &mut Vec<ClientOutput>) {
        if self.phase != ClientPhase::Reconnecting {
            self.phase = ClientPhase::Connecting;
        }
        self.next_probe_at = None;
        self.endpoint = Some(endpoint.clone());
        out.push(ClientOutput::Connect(endpoint));
    }

    pub fn on_discovery_reply(&mut self, host: &str, datagram: &[u8], _now: u64) -> Vec<ClientOutput> {
        let mut out = Vec::new();
        if self.phase != ClientPhase::Discovering {
            return out;
        }
        let Some(reply) = parse_discovery_reply(datagram) else {
            return out;
        };
        let endpoint = ServerEndpoint::new(host, reply.tcp_port);
        let accept = match &self.config.discovery {
            DiscoveryPolicy::FirstResponder => true,
            DiscoveryPolicy::PreferSession(session) => &reply.session_id == session,
        };
        if accept {
            log::info!("discovered session {} at {}:{}", reply.session_id, endpoint.host, endpoint.port);
            self.connect_to(endpoint, &mut out);
        } else {
            self.replies.push((endpoint, reply));
        }
        out
    }

    pub fn on_connected(&mut self, now: u64) -> Vec<ClientOutput> {
        self.connected = true;
        self.reconnect_at = None;
        if self.phase != ClientPhase::Reconnecting {
            self.phase = ClientPhase::AwaitingWelcome;
        }
        self.next_heartbeat_at = Some(now + self.config.heartbeat_interval_ms);
        vec![ClientOutput::Send(Envelope::new(
            Sender::Anonymous,
            Body::JoinRequest {
                role: self.config.role,
                protocol: PROTOCOL_VERSION.to_string(),
            },
        ))]
    }

    pub fn on_connect_failed(&mut self, now: u64) -> Vec<ClientOutput> {
        self.connected = false;
        if self.phase != ClientPhase::Stopped {
            self.reconnect_at = Some(now + RECONNECT_DELAY_MS);
        }
        Vec::new()
    }

    /// The transport closed. A running session is rejoined from scratch:
    /// new client id, fresh anchor download and FullState.
    pub fn on_disconnected(&mut self, _now: u64) -> Vec<ClientOutput> {
        let mut out = Vec::new();
        self.connected = false;
        self.next_heartbeat_at = None;
        if matches!(self.phase, ClientPhase::Stopped | ClientPhase::Idle) {
            return out;
        }
        log::info!("{:?} lost its connection; rejoining", self.client_id);
        self.begin_rejoin(&mut out);
        out
    }

    fn begin_rejoin(&mut self, out: &mut Vec<ClientOutput>) {
        self.phase = ClientPhase::Reconnecting;
        self.client_id = None;
        self.alignment = None;
        match self.endpoint.clone() {
            Some(endpoint) => self.connect_to(endpoint, out),
            None => self.phase = ClientPhase::Stopped,
        }
    }

    pub fn tick(&mut self, now: u64) -> Vec<ClientOutput> {
        let mut out = Vec::new();
        if self.next_probe_at.is_some_and(|t| now >= t) {
            if self.probes_sent < PROBE_ATTEMPTS {
                self.probes_sent += 1;
                self.next_probe_at = Some(now + PROBE_INTERVAL_MS);
                out.push(ClientOutput::Probe);
            } else {
                self.next_probe_at = None;
                match self.replies.first().cloned() {
                    Some((endpoint, _)) => self.connect_to(endpoint, &mut out),
                    None => self.fail(ClientError::NoServerFound, &mut out),
                }
            }
        }
        if self.reconnect_at.is_some_and(|t| now >= t) {
            self.reconnect_at = None;
            if let Some(endpoint) = self.endpoint.clone() {
                out.push(ClientOutput::Connect(endpoint));
            }
        }
        if self.connected && self.next_heartbeat_at.is_some_and(|t| now >= t) {
            self.next_heartbeat_at = Some(now + self.config.heartbeat_interval_ms);
            out.push(ClientOutput::Send(Envelope::new(self.sender(), Body::Heartbeat)));
        }
        out
    }

    fn sender(&self) -> Sender {
        self.client_id.clone().map_or(Sender::Anonymous, Sender::Client)
    }

    fn fail(&mut self, error: ClientError, out: &mut Vec<ClientOutput>) {
        log::warn!("client failed: {error}");
        self.phase = ClientPhase::Stopped;
        self.next_heartbeat_at = None;
        self.next_probe_at = None;
        self.reconnect_at = None;
        if self.connected {
            self.connected = false;
            out.push(ClientOutput::Disconnect);
        }
        out.push(ClientOutput::Event(ClientEvent::Failed(error)));
    }

    /// Submits `op` (already in session coordinates). The replica changes
    /// only when the server's Update comes back; the returned request id is
    /// acknowledged by an `Acked` event carrying the assigned seq.
    pub fn submit(&mut self, op: OpPayload) -> Result<(u64, Vec<ClientOutput>), ClientError> {
        if self.phase != ClientPhase::Synced || !self.connected {
            return Err(ClientError::NotSynced);
        }
        let req = self.next_req;
        self.next_req += 1;
        let envelope = Envelope::new(self.sender(), Body::SubmitOp { req, op });
        Ok((req, vec![ClientOutput::Send(envelope)]))
    }

    /// Publishes the head pose, mapped into the session frame.
    pub fn publish_pose(&mut self) -> Result<(u64, Vec<ClientOutput>), ClientError> {
        let (Some(alignment), Some(client)) = (self.alignment, self.client_id.clone()) else {
            return Err(ClientError::NotSynced);
        };
        let pose = alignment.apply_pose(&self.head_pose);
        self.submit(OpPayload::SetUserPose { client, pose })
    }

    pub fn leave(&mut self) -> Vec<ClientOutput> {
        let mut out = Vec::new();
        if self.connected {
            out.push(ClientOutput::Send(Envelope::new(self.sender(), Body::Leave)));
            out.push(ClientOutput::Disconnect);
        }
        self.connected = false;
        self.phase = ClientPhase::Stopped;
        self.next_heartbeat_at = None;
        self.reconnect_at = None;
        out
    }

    pub fn on_envelope(&mut self, envelope: Envelope, _now: u64) -> Vec<ClientOutput> {
        let mut out = Vec::new();
        if envelope.sender != Sender::Server || !self.connected {
            return out;
        }
        let seq = envelope.seq;
        match envelope.body {
            Body::Welcome {
                client_id,
                session_id,
                anchor_needed,
                ..
            } => self.on_welcome(client_id, session_id, anchor_needed, &mut out),
            Body::AnchorInfo { anchor } => {
                if self.phase != ClientPhase::Aligning {
                    return out;
                }
                let aligned = self
                    .sensor
                    .measure_anchors(&anchor)
                    .and_then(|local| {
                        let t = solve_alignment(&anchor, &local)?;
                        Ok((t, alignment_residual_rms(&t, &anchor, &local)?))
                    });
                match aligned {
                    Ok((_, residual)) if residual > ALIGNMENT_TOLERANCE => {
                        self.abandon(ClientError::AlignmentFailed { residual }, &mut out)
                    }
                    Ok((transform, _)) => self.alignment = Some(transform),
                    Err(e) => self.abandon(ClientError::Geometry(e), &mut out),
                }
            }
            Body::FullState { state: Some(state) } => {
                if self.alignment.is_none() || self.client_id.is_none() {
                    log::warn!("FullState before alignment ignored");
                    return out;
                }
                self.max_seen_seq = self.max_seen_seq.max(state.server_seq);
                self.base = state.clone();
                self.replica = state;
                self.applied.clear();
                self.phase = ClientPhase::Synced;
                out.push(ClientOutput::Event(ClientEvent::Synced {
                    seq: self.replica.server_seq,
                }));
            }
            Body::Update { origin, reqs, op } => {
                let seq = seq.expect("validated Update carries seq");
                self.max_seen_seq = self.max_seen_seq.max(seq);
                if self.phase != ClientPhase::Synced {
                    return out;
                }
                let expected = self.replica.server_seq + 1;
                if seq < expected {
                    return out;
                }
                if seq > expected {
                    log::warn!("sequence gap: expected {expected}, got {seq}; resynchronizing");
                    self.phase = ClientPhase::Reconnecting;
                    out.push(ClientOutput::Event(ClientEvent::GapDetected { expected, got: seq }));
                    out.push(ClientOutput::Send(Envelope::new(
                        self.sender(),
                        Body::FullState { state: None },
                    )));
                    return out;
                }
                apply_op_in_place(&mut self.replica, seq, &op).expect("checked above");
                self.applied.push((seq, op));
                if origin.client().is_some() && origin.client() == self.client_id.as_ref() {
                    for req in reqs {
                        out.push(ClientOutput::Event(ClientEvent::Acked { req, seq }));
                    }
                }
            }
            Body::Error { code, req, detail } => match code {
                ErrorCode::SessionFull => self.fail(ClientError::SessionFull, &mut out),
                ErrorCode::VersionMismatch => self.fail(ClientError::VersionMismatch, &mut out),
                ErrorCode::NotJoined => {
                    self.connected = false;
                    out.push(ClientOutput::Disconnect);
                    self.begin_rejoin(&mut out);
                }
                _ => out.push(ClientOutput::Event(ClientEvent::Rejected { req, code, detail })),
            },
            _ => {}
        }
        out
    }

    fn abandon(&mut self, error: ClientError, out: &mut Vec<ClientOutput>) {
        if self.connected {
            out.push(ClientOutput::Send(Envelope::new(self.sender(), Body::Leave)));
        }
        self.fail(error, out);
    }

    fn on_welcome(
        &mut self,
        client_id: ClientId,
        session_id: String,
        anchor_needed: bool,
        out: &mut Vec<ClientOutput>,
    ) {
        let promoted = self.client_id.as_ref() == Some(&client_id);
        if !promoted {
            if !matches!(self.phase, ClientPhase::AwaitingWelcome | ClientPhase::Reconnecting) {
                return;
            }
            if self.session_id.as_ref().is_some_and(|s| s != &session_id) {
                log::info!("server now hosts session {session_id}; starting fresh");
                self.replica = SessionState::initial();
                self.base = SessionState::initial();
                self.applied.clear();
                self.max_seen_seq = 0;
            }
            self.client_id = Some(client_id.clone());
            self.session_id = Some(session_id.clone());
            out.push(ClientOutput::Event(ClientEvent::Joined {
                client_id,
                session_id,
            }));
        }
        if anchor_needed {
            self.phase = ClientPhase::AnchorDefining;
            let anchor = self.sensor.define_anchors();
            self.alignment = Some(RigidTransform::identity());
            out.push(ClientOutput::Send(Envelope::new(self.sender(), Body::AnchorUpload { anchor })));
        } else if !promoted {
            self.phase = ClientPhase::Aligning;
        }
    }
}
