//! Simulated measurement node.
//!
//! A node owns a set of sensor bindings. In pull mode it answers collector
//! polls (`POLL <token>` → `ACK <token> <payload>`); in push mode it submits
//! its own points to a write sink. Either way a watchdog resets the node's
//! link state when it has not heard from the network for too long.

mod agent;
mod config;
mod sensor;
mod server;

pub use agent::{NodeAgent, PushReport};
pub use config::{NodeConfig, NodeMode, SensorBinding, DEFAULT_WATCHDOG_TIMEOUT_S};
pub use sensor::{Environment, NoEnvironment, SensorKind, SensorModel, Unit};
pub use server::{spawn_pull_node, spawn_push_node, LossInjector, NodeServer, NodeStats};

use crate::clock::secs_to_ns;
use crate::wire::WireError;

#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    #[error("coupled sensor references unknown signal {0:?}")]
    UnknownCouplingSource(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("node is not in {0} mode")]
    WrongMode(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Longest accepted poll token, in decimal digits (fits a `u64`).
const MAX_TOKEN_DIGITS: usize = 20;

pub fn encode_poll(token: u64) -> Vec<u8> {
    format!("POLL {token}").into_bytes()
}

/// Parses `POLL <token>`; anything else is malformed.
pub fn parse_poll(request: &[u8]) -> Option<u64> {
    let digits = request.strip_prefix(b"POLL ")?;
    if digits.is_empty()
        || digits.len() > MAX_TOKEN_DIGITS
        || !digits.iter().all(u8::is_ascii_digit)
    {
        return None;
    }
    std::str::from_utf8(digits).ok()?.parse().ok()
}

pub fn encode_ack(token: u64, payload: &[u8]) -> Vec<u8> {
    let mut out = format!("ACK {token} ").into_bytes();
    out.extend_from_slice(payload);
    out
}

/// Splits `ACK <token> <payload>` into its token and payload bytes.
pub fn parse_ack(response: &[u8]) -> Result<(u64, &[u8]), WireError> {
    let bad = |offset: usize, reason: &str| WireError::Parse {
        offset,
        reason: reason.into(),
    };
    let rest = response
        .strip_prefix(b"ACK ")
        .ok_or_else(|| bad(0, "expected 'ACK '"))?;
    let end = rest
        .iter()
        .position(|&b| b == b' ')
        .ok_or_else(|| bad(response.len(), "expected ' ' after token"))?;
    let digits = &rest[..end];
    if digits.is_empty() || digits.len() > MAX_TOKEN_DIGITS || !digits.iter().all(u8::is_ascii_digit) {
        return Err(bad(4, "invalid token"));
    }
    let token = std::str::from_utf8(digits)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(4, "invalid token"))?;
    Ok((token, &rest[end + 1..]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WatchdogAction {
    None,
    Reset,
}

/// Resets once the silence since `last_contact_ns` reaches the timeout; the
/// boundary itself resets.
pub fn watchdog_tick(last_contact_ns: i64, now_ns: i64, timeout_s: f64) -> WatchdogAction {
    debug_assert!(now_ns >= last_contact_ns);
    if now_ns.saturating_sub(last_contact_ns) >= secs_to_ns(timeout_s) {
        WatchdogAction::Reset
    } else {
        WatchdogAction::None
    }
}
