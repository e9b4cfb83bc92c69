use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::localization::LanguageCode;
use crate::protocol::Role;

#[derive(Debug, Error)]
pub enum ScenarioParseError {
    #[error("scenario is not valid TOML: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Simulated network behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimNetConfig {
    /// Inclusive one-way latency range per frame.
    pub latency_ms: [u64; 2],
    /// Chance, per connection per window, that the connection breaks.
    pub drop_probability: f64,
    pub drop_window_ms: u64,
}

impl Default for SimNetConfig {
    fn default() -> Self {
        Self {
            latency_ms: [5, 50],
            drop_probability: 0.0,
            drop_window_ms: 1_000,
        }
    }
}

/// Client `client` (index in join order) loses its link at `at_ms`; the
/// server cannot be reached again for `duration_ms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disconnect {
    pub client: usize,
    pub at_ms: u64,
    #[serde(default)]
    pub duration_ms: u64,
}

/// Client `client` stops sending anything (heartbeats included) for
/// `duration_ms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Silence {
    pub client: usize,
    pub at_ms: u64,
    pub duration_ms: u64,
}

/// The Update numbered `at_seq` never reaches client `client`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gap {
    pub client: usize,
    pub at_seq: u64,
}

/// The first frame client `client` sends after `at_ms` arrives garbled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corrupt {
    pub client: usize,
    pub at_ms: u64,
}

/// `count` extra clients with `role` start at `at_ms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LateJoin {
    pub at_ms: u64,
    pub role: Role,
    #[serde(default = "one")]
    pub count: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// Participants started at t = 0 (in index order, 1 ms apart).
    pub participants: usize,
    pub observers: usize,
    /// Total random ops submitted by participant bots.
    pub ops: usize,
    /// Mean spacing of one bot's actions.
    pub op_interval_ms: u64,
    /// Participant capacity of the simulated server.
    pub capacity: usize,
    /// Client languages, assigned round-robin in join order.
    pub languages: Vec<LanguageCode>,
    /// Individuals in the generated dataset the session loads.
    pub individuals: usize,
    /// The run is abandoned (and fails) past this virtual time.
    pub max_virtual_ms: u64,
    pub network: SimNetConfig,
    #[serde(rename = "disconnect")]
    pub disconnects: Vec<Disconnect>,
    #[serde(rename = "silence")]
    pub silences: Vec<Silence>,
    #[serde(rename = "gap")]
    pub gaps: Vec<Gap>,
    #[serde(rename = "corrupt")]
    pub corruptions: Vec<Corrupt>,
    #[serde(rename = "join")]
    pub joins: Vec<LateJoin>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seed: 42,
            participants: 5,
            observers: 0,
            ops: 1_000,
            op_interval_ms: 25,
            capacity: crate::server::DEFAULT_CAPACITY,
            languages: vec![LanguageCode::EN, LanguageCode::JA],
            individuals: 40,
            max_virtual_ms: 3_600_000,
            network: SimNetConfig::default(),
            disconnects: Vec::new(),
            silences: Vec::new(),
            gaps: Vec::new(),
            corruptions: Vec::new(),
            joins: Vec::new(),
        }
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioParseError> {
        let scenario: Scenario = toml::from_str(text)?;
        scenario.validate().map_err(ScenarioParseError::Invalid)?;
        Ok(scenario)
    }

    /// Clients started at t = 0 plus every late joiner.
    pub fn total_clients(&self) -> usize {
        self.participants + self.observers + self.joins.iter().map(|j| j.count).sum::<usize>()
    }

    pub fn validate(&self) -> Result<(), String> {
        let [lo, hi] = self.network.latency_ms;
        if lo > hi {
            return Err(format!("latency range [{lo}, {hi}] is inverted"));
        }
        if !(0.0..=1.0).contains(&self.network.drop_probability) {
            return Err("drop_probability must lie in [0, 1]".into());
        }
        if self.network.drop_probability > 0.0 && self.network.drop_window_ms == 0 {
            return Err("drop_window_ms must be positive".into());
        }
        if self.op_interval_ms == 0 {
            return Err("op_interval_ms must be positive".into());
        }
        if self.languages.is_empty() {
            return Err("at least one language is required".into());
        }
        if self.individuals == 0 {
            return Err("individuals must be positive".into());
        }
        let clients = self.total_clients();
        let indices = self
            .disconnects
            .iter()
            .map(|d| d.client)
            .chain(self.silences.iter().map(|s| s.client))
            .chain(self.gaps.iter().map(|g| g.client))
            .chain(self.corruptions.iter().map(|c| c.client));
        for index in indices {
            if index >= clients {
                return Err(format!("client index {index} out of range (scenario has {clients})"));
            }
        }
        Ok(())
    }
}
