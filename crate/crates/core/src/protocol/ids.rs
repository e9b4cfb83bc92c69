use std::fmt;

use serde::{Deserialize, Serialize};

/// Server-assigned client identifier (`c1`, `c2`, …), never reused within a
/// session.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ClientId(String);

impl ClientId {
    pub fn from_number(n: u64) -> Self {
        ClientId(format!("c{n}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ClientId {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        let valid = value.len() >= 2
            && value.starts_with('c')
            && value[1..].bytes().all(|b| b.is_ascii_digit());
        if valid {
            Ok(ClientId(value))
        } else {
            Err(format!("invalid client id `{value}`"))
        }
    }
}

impl From<ClientId> for String {
    fn from(id: ClientId) -> Self {
        id.0
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Participant,
    Observer,
}

/// Who sent an envelope: the server, a joined client, or a connection that
/// has not been assigned an id yet.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Sender {
    Server,
    Anonymous,
    Client(ClientId),
}

impl Sender {
    pub fn client(&self) -> Option<&ClientId> {
        match self {
            Sender::Client(id) => Some(id),
            _ => None,
        }
    }
}

impl TryFrom<String> for Sender {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        match value.as_str() {
            "server" => Ok(Sender::Server),
            "anonymous" => Ok(Sender::Anonymous),
            _ => ClientId::try_from(value).map(Sender::Client),
        }
    }
}

impl From<Sender> for String {
    fn from(sender: Sender) -> Self {
        match sender {
            Sender::Server => "server".into(),
            Sender::Anonymous => "anonymous".into(),
            Sender::Client(id) => id.into(),
        }
    }
}

impl fmt::Display for Sender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&String::from(self.clone()))
    }
}

impl From<ClientId> for Sender {
    fn from(id: ClientId) -> Self {
        Sender::Client(id)
    }
}
