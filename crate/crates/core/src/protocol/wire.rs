use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::{ClientId, OpPayload, Role, Sender, SessionState};
use crate::viewmath::AnchorSet;

pub const PROTOCOL_VERSION: &str = "DATACUBE/1";

/// Largest accepted frame body, in bytes.
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("frame body of {0} bytes exceeds the 16 MiB limit")]
    FrameTooLarge(usize),
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unknown message kind `{0}`")]
    UnknownKind(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorCode {
    VersionMismatch,
    SessionFull,
    AnchorAlreadySet,
    NotJoined,
    NotSynced,
    ObserverWriteDenied,
    SchemaViolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    JoinRequest,
    Welcome,
    AnchorUpload,
    AnchorInfo,
    SubmitOp,
    Update,
    FullState,
    Heartbeat,
    Leave,
    Error(ErrorCode),
}

const KIND_NAMES: [&str; 10] = [
    "JoinRequest",
    "Welcome",
    "AnchorUpload",
    "AnchorInfo",
    "SubmitOp",
    "Update",
    "FullState",
    "Heartbeat",
    "Leave",
    "Error",
];

/// Message bodies. On the wire the variant name is the `kind` field and the
/// fields below form the `payload` object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Body {
    JoinRequest {
        role: Role,
        protocol: String,
    },
    Welcome {
        client_id: ClientId,
        session_id: String,
        protocol: String,
        /// True when the joiner must define the session frame.
        anchor_needed: bool,
    },
    AnchorUpload {
        anchor: AnchorSet,
    },
    AnchorInfo {
        anchor: AnchorSet,
    },
    SubmitOp {
        req: u64,
        op: OpPayload,
    },
    Update {
        origin: Sender,
        /// Submission ids this update settles (several when poses coalesce).
        reqs: Vec<u64>,
        op: OpPayload,
    },
    /// From a client, `state` is `None` and asks for a resync.
    FullState {
        state: Option<SessionState>,
    },
    Heartbeat,
    Leave,
    Error {
        code: ErrorCode,
        req: Option<u64>,
        detail: String,
    },
}

impl Body {
    pub fn kind(&self) -> MessageKind {
        match self {
            Body::JoinRequest { .. } => MessageKind::JoinRequest,
            Body::Welcome { .. } => MessageKind::Welcome,
            Body::AnchorUpload { .. } => MessageKind::AnchorUpload,
            Body::AnchorInfo { .. } => MessageKind::AnchorInfo,
            Body::SubmitOp { .. } => MessageKind::SubmitOp,
            Body::Update { .. } => MessageKind::Update,
            Body::FullState { .. } => MessageKind::FullState,
            Body::Heartbeat => MessageKind::Heartbeat,
            Body::Leave => MessageKind::Leave,
            Body::Error { code, .. } => MessageKind::Error(*code),
        }
    }

    fn server_only(&self) -> bool {
        matches!(
            self,
            Body::Welcome { .. }
                | Body::AnchorInfo { .. }
                | Body::Update { .. }
                | Body::Error { .. }
                | Body::FullState { state: Some(_) }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub sender: Sender,
    /// Present on server-ordered messages: the op's sequence number on
    /// `Update`, the state's on `FullState`.
    pub seq: Option<u64>,
    pub body: Body,
}

impl Envelope {
    pub fn new(sender: Sender, body: Body) -> Self {
        Self {
            sender,
            seq: None,
            body,
        }
    }

    pub fn from_server(body: Body) -> Self {
        let seq = match &body {
            Body::FullState { state: Some(s) } => Some(s.server_seq),
            _ => None,
        };
        Self {
            sender: Sender::Server,
            seq,
            body,
        }
    }

    pub fn update(seq: u64, origin: Sender, reqs: Vec<u64>, op: OpPayload) -> Self {
        Self {
            sender: Sender::Server,
            seq: Some(seq),
            body: Body::Update { origin, reqs, op },
        }
    }

    pub fn error(code: ErrorCode, req: Option<u64>, detail: impl Into<String>) -> Self {
        Self::from_server(Body::Error {
            code,
            req,
            detail: detail.into(),
        })
    }

    pub fn kind(&self) -> MessageKind {
        self.body.kind()
    }

    pub fn validate(&self) -> Result<(), String> {
        let from_server = self.sender == Sender::Server;
        if self.body.server_only() && !from_server {
            return Err(format!("{:?} may only come from the server", self.kind()));
        }
        match (&self.body, self.seq) {
            (Body::Update { .. }, None) => return Err("Update without seq".into()),
            (Body::Update { .. }, Some(_)) => {}
            (Body::FullState { state: Some(s) }, seq) if seq != Some(s.server_seq) => {
                return Err("FullState seq must equal the state's server_seq".into())
            }
            (Body::FullState { state: Some(_) }, _) => {}
            (_, Some(_)) => return Err(format!("{:?} carries no seq", self.kind())),
            _ => {}
        }
        match &self.body {
            Body::SubmitOp { op, .. } | Body::Update { op, .. } => op.validate(),
            Body::FullState { state: Some(s) } => s.validate(),
            _ => Ok(()),
        }
    }
}

/// Envelope as structured text: a JSON object with keys `kind`, `payload`,
/// `sender`, `seq`, always written in that (sorted) order.
pub fn encode_body(envelope: &Envelope) -> Result<Vec<u8>, ProtocolError> {
    let value = serde_json::to_value(&envelope.body)
        .map_err(|e| ProtocolError::SchemaViolation(e.to_string()))?;
    let Value::Object(mut object) = value else {
        unreachable!("tagged enums serialize to objects");
    };
    object.insert(
        "sender".into(),
        Value::String(String::from(envelope.sender.clone())),
    );
    object.insert(
        "seq".into(),
        envelope.seq.map_or(Value::Null, Value::from),
    );
    let bytes = serde_json::to_vec(&Value::Object(object))
        .map_err(|e| ProtocolError::SchemaViolation(e.to_string()))?;
    if bytes.len() > MAX_FRAME_LEN {
        return Err(ProtocolError::FrameTooLarge(bytes.len()));
    }
    Ok(bytes)
}

/// Length-prefixed frame: 4-byte big-endian body length, then the body.
pub fn encode(envelope: &Envelope) -> Result<Vec<u8>, ProtocolError> {
    let body = encode_body(envelope)?;
    let mut frame = Vec::with_capacity(4 + body.len());
    frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
    frame.extend_from_slice(&body);
    Ok(frame)
}

/// Decodes one complete frame; trailing or missing bytes are malformed.
pub fn decode(frame: &[u8]) -> Result<Envelope, ProtocolError> {
    let Some(prefix) = frame.get(..4) else {
        return Err(ProtocolError::MalformedFrame(format!(
            "{} bytes is shorter than the length prefix",
            frame.len()
        )));
    };
    let len = u32::from_be_bytes(prefix.try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME_LEN {
        return Err(ProtocolError::FrameTooLarge(len));
    }
    let body = &frame[4..];
    if body.len() != len {
        return Err(ProtocolError::MalformedFrame(format!(
            "length prefix says {len} bytes, frame carries {}",
            body.len()
        )));
    }
    decode_body(body)
}

/// Decodes an unprefixed body, as carried one-per-message over WebSocket.
pub fn decode_body(body: &[u8]) -> Result<Envelope, ProtocolError> {
    if body.len() > MAX_FRAME_LEN {
        return Err(ProtocolError::FrameTooLarge(body.len()));
    }
    let text =
        std::str::from_utf8(body).map_err(|e| ProtocolError::MalformedFrame(e.to_string()))?;
    let value: Value =
        serde_json::from_str(text).map_err(|e| ProtocolError::MalformedFrame(e.to_string()))?;
    let Value::Object(mut object) = value else {
        return Err(ProtocolError::MalformedFrame("body is not an object".into()));
    };
    let kind = match object.get("kind") {
        Some(Value::String(kind)) => kind.clone(),
        _ => return Err(ProtocolError::SchemaViolation("missing `kind`".into())),
    };
    if !KIND_NAMES.contains(&kind.as_str()) {
        return Err(ProtocolError::UnknownKind(kind));
    }
    let schema = |e: String| ProtocolError::SchemaViolation(e);
    let sender: Sender = take_field(&mut object, "sender").map_err(schema)?;
    let seq: Option<u64> = take_field(&mut object, "seq").map_err(schema)?;
    let body: Body = serde_json::from_value(Value::Object(object))
        .map_err(|e| ProtocolError::SchemaViolation(e.to_string()))?;
    let envelope = Envelope { sender, seq, body };
    envelope.validate().map_err(ProtocolError::SchemaViolation)?;
    Ok(envelope)
}

fn take_field<T: for<'de> Deserialize<'de>>(
    object: &mut Map<String, Value>,
    key: &str,
) -> Result<T, String> {
    let value = object.remove(key).unwrap_or(Value::Null);
    serde_json::from_value(value).map_err(|e| format!("`{key}`: {e}"))
}

/// Incremental frame reader for stream transports.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buffer: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buffer.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    /// Next complete frame, if one is buffered. `FrameTooLarge` is reported
    /// as soon as the prefix arrives; the stream is unusable afterwards.
    pub fn next_frame(&mut self) -> Result<Option<Envelope>, ProtocolError> {
        if self.buffer.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_be_bytes(self.buffer[..4].try_into().expect("4 bytes")) as usize;
        if len > MAX_FRAME_LEN {
            return Err(ProtocolError::FrameTooLarge(len));
        }
        if self.buffer.len() < 4 + len {
            return Ok(None);
        }
        let frame: Vec<u8> = self.buffer.drain(..4 + len).collect();
        decode_body(&frame[4..]).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{ObjectTransform, CUBE_ID};
    use crate::viewmath::{AnchorPoint, Vec3};

    fn heartbeat() -> Envelope {
        Envelope::new(Sender::Client(ClientId::from_number(1)), Body::Heartbeat)
    }

    #[test]
    fn length_prefix_matches_body() {
        let frame = encode(&heartbeat()).unwrap();
        let len = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
        assert_eq!(len, frame.len() - 4);
        assert_eq!(
            std::str::from_utf8(&frame[4..]).unwrap(),
            r#"{"kind":"Heartbeat","sender":"c1","seq":null}"#
        );
        assert_eq!(decode(&frame).unwrap(), heartbeat());
    }

    #[test]
    fn truncated_frame_is_malformed() {
        let mut frame = 100u32.to_be_bytes().to_vec();
        frame.extend(std::iter::repeat_n(b' ', 50));
        assert!(matches!(decode(&frame), Err(ProtocolError::MalformedFrame(_))));
        assert!(matches!(decode(&[0, 0]), Err(ProtocolError::MalformedFrame(_))));
    }

    #[test]
    fn oversized_prefix_is_rejected() {
        let frame = ((MAX_FRAME_LEN + 1) as u32).to_be_bytes();
        assert_eq!(decode(&frame), Err(ProtocolError::FrameTooLarge(MAX_FRAME_LEN + 1)));
        let mut decoder = FrameDecoder::new();
        decoder.push(&frame);
        assert_eq!(decoder.next_frame(), Err(ProtocolError::FrameTooLarge(MAX_FRAME_LEN + 1)));
    }

    #[test]
    fn unknown_kind_and_schema_errors() {
        assert_eq!(
            decode_body(br#"{"kind":"Teleport","sender":"c1","seq":null}"#),
            Err(ProtocolError::UnknownKind("Teleport".into()))
        );
        assert!(matches!(
            decode_body(br#"{"kind":"SubmitOp","payload":{"req":1},"sender":"c1","seq":null}"#),
            Err(ProtocolError::SchemaViolation(_))
        ));
        assert!(matches!(
            decode_body(br#"{"kind":"Heartbeat","sender":"mallory","seq":null}"#),
            Err(ProtocolError::SchemaViolation(_))
        ));
        assert!(matches!(decode_body(b"not json"), Err(ProtocolError::MalformedFrame(_))));
        assert!(matches!(decode_body(&[0xff, 0xfe]), Err(ProtocolError::MalformedFrame(_))));
    }

    #[test]
    fn clients_cannot_forge_server_messages() {
        let forged = Envelope {
            sender: Sender::Client(ClientId::from_number(2)),
            seq: Some(4),
            body: Body::Update { origin: Sender::Server, reqs: vec![], op: OpPayload::RemoveUserPose { client: ClientId::from_number(1) } },
        };
        let bytes = encode_body(&forged).unwrap();
        assert!(matches!(decode_body(&bytes), Err(ProtocolError::SchemaViolation(_))));
    }

    #[test]
    fn non_unit_quaternion_is_a_schema_violation() {
        let op = OpPayload::SetTransform {
            object: CUBE_ID.into(),
            transform: ObjectTransform::at(Vec3::zeros(), 1.0),
        };
        let env = Envelope::new(Sender::Client(ClientId::from_number(1)), Body::SubmitOp { req: 1, op });
        let text = String::from_utf8(encode_body(&env).unwrap()).unwrap();
        let broken = text.replace("[0.0,0.0,0.0,1.0]", "[0.0,0.0,0.0,2.0]");
        assert_ne!(text, broken);
        assert!(matches!(decode_body(broken.as_bytes()), Err(ProtocolError::SchemaViolation(_))));
    }

    #[test]
    fn streaming_decoder_splits_frames() {
        let anchor = AnchorSet::new(vec![
            AnchorPoint::new("a", Vec3::new(0.0, 0.0, 0.0)),
            AnchorPoint::new("b", Vec3::new(1.0, 0.0, 0.0)),
            AnchorPoint::new("c", Vec3::new(0.0, 1.0, 0.0)),
        ])
        .unwrap();
        let messages = vec![
            heartbeat(),
            Envelope::from_server(Body::AnchorInfo { anchor }),
            Envelope::from_server(Body::FullState { state: Some(SessionState::initial()) }),
        ];
        let stream: Vec<u8> = messages.iter().flat_map(|m| encode(m).unwrap()).collect();
        let mut decoder = FrameDecoder::new();
        let mut out = Vec::new();
        for chunk in stream.chunks(7) {
            decoder.push(chunk);
            while let Some(env) = decoder.next_frame().unwrap() {
                out.push(env);
            }
        }
        assert_eq!(out, messages);
        assert_eq!(decoder.buffered(), 0);
    }
}
