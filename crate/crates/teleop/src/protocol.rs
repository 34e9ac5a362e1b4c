//! JSON messages exchanged over the session WebSocket.

use serde::{Deserialize, Serialize};

fn one() -> u64 {
    1
}

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// New latent input; replaces whatever input is pending.
    Input {
        z: Vec<f64>,
        /// Client clock in milliseconds, echoed in the acknowledgement.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t: Option<f64>,
    },
    Pause,
    Resume,
    Reset,
    /// Advances a lockstep session (tick rate 0) by `count` ticks.
    Step {
        #[serde(default = "one")]
        count: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifecycle {
    Paused,
    Resumed,
    Reset,
    Closed,
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerEvent {
    /// One control tick: the state after the step and what produced it.
    State {
        /// Simulated time in milliseconds since the last reset.
        t: f64,
        tick: u64,
        q: Vec<f64>,
        /// `[x, y, theta]` per arm.
        ee: Vec<[f64; 3]>,
        z: Vec<f64>,
        a: Vec<f64>,
    },
    /// Input as it will be applied, after clamping and deadzone.
    Ack {
        z: Vec<f64>,
        clamped: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t: Option<f64>,
    },
    Fault {
        reason: String,
        tick: u64,
    },
    WarnOod {
        tick: u64,
        distance: f64,
        radius: f64,
    },
    Lifecycle {
        event: Lifecycle,
    },
    /// Sent right before the server drops a subscriber that fell behind.
    Overflow {
        missed: u64,
    },
    Error {
        message: String,
    },
}
