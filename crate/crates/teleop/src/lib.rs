//! Human-in-the-loop control through a trained latent action model.
//!
//! A [`Session`] owns the simulated arm: every tick it decodes the latest
//! latent input against the current state and steps the arm. The
//! [`service`] module exposes sessions over HTTP and WebSocket, and
//! [`record`] keeps inputs so a run can be replayed bit for bit.

pub mod record;
pub mod protocol;
pub mod service;
pub mod session;

pub use record::{replay, InputLog, LogEntry, LogError, ReplayResult};
pub use protocol::{ClientMessage, Lifecycle, ServerEvent};
pub use service::{router, serve, task_start_state, Registry, Service, TaskEntry};
pub use session::{condition_input, Applied, HistoryEntry, Session, SessionConfig, SessionError};
