//! UDP discovery exchange: a fixed probe and a `port;session` reply.

pub const DISCOVERY_PROBE: &[u8] = b"DATACUBE_DISCOVERY_V1?";
const REPLY_PREFIX: &str = "DATACUBE_DISCOVERY_V1!";

/// The responder's answer to `datagram`; `None` (silence) unless it is
/// exactly the probe.
pub fn discovery_response(datagram: &[u8], tcp_port: u16, session_id: &str) -> Option<Vec<u8>> {
    (datagram == DISCOVERY_PROBE).then(|| format!("{REPLY_PREFIX}{tcp_port};{session_id}").into_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscoveryReply {
    pub tcp_port: u16,
    pub session_id: String,
}

pub fn parse_discovery_reply(datagram: &[u8]) -> Option<DiscoveryReply> {
    let text = std::str::from_utf8(datagram).ok()?;
    let (port, session_id) = text.strip_prefix(REPLY_PREFIX)?.split_once(';')?;
    if session_id.is_empty() || port.starts_with('+') {
        return None;
    }
    Some(DiscoveryReply {
        tcp_port: port.parse().ok()?,
        session_id: session_id.to_string(),
    })
}
