//! Operator tooling for DataCube sessions: the networked session server,
//! a loopback socket runner for scenarios, and dataset utilities.

pub mod hub;
pub mod loopback;
pub mod serve;
pub mod tools;
pub mod transport;
