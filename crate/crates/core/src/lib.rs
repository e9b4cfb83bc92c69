//! Core of the DataCube collaborative analytics system.
//!
//! Everything here is transport-free: the session server and client are
//! message-driven state machines, so the same code runs over TCP, WebSocket
//! and the deterministic in-memory network in [`sim`].

pub mod dataset;
pub mod viewmath;
pub mod protocol;
pub mod server;
pub mod localization;
pub mod client;
pub mod sim;
