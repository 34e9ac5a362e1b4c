//! The control loop of a single teleoperation session, free of any I/O.
//!
//! Each tick decodes the latest latent input against the current state and
//! steps the simulator. The service drives one [`Session`] per client
//! session; tests and replays drive it directly.

use std::collections::VecDeque;
use std::sync::Arc;

use latact_core::arm::{ArmGeometry, JointState, JointVelocityAction};
use latact_core::models::TrainedModel;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::record::{InputLog, LogEntry};
use crate::protocol::{ClientMessage, Lifecycle, ServerEvent};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("model and task geometries differ: {0}")]
    GeometryMismatch(String),
    #[error("input has {actual} components, the model expects {expected}")]
    InputDimension { expected: usize, actual: usize },
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error(transparent)]
    Core(#[from] latact_core::Error),
}

fn default_tick_hz() -> f64 {
    50.0
}
fn default_deadzone() -> f64 {
    0.05
}
fn default_ood_radius() -> Option<f64> {
    Some(1.0)
}
fn default_history() -> usize {
    10_000
}
fn default_stream_buffer() -> usize {
    1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Ticks per second. 0 runs in lockstep: only `step` messages advance time.
    #[serde(default = "default_tick_hz")]
    pub tick_hz: f64,
    /// Input components with smaller magnitude are treated as zero.
    #[serde(default = "default_deadzone")]
    pub deadzone: f64,
    /// Novelty (normalized distance to the nearest training state) above
    /// which an out-of-distribution warning is emitted. `None` disables it.
    #[serde(default = "default_ood_radius")]
    pub ood_radius: Option<f64>,
    #[serde(default = "default_history")]
    pub history_capacity: usize,
    /// Events a subscriber may fall behind before it is disconnected.
    #[serde(default = "default_stream_buffer")]
    pub stream_buffer: usize,
    /// Keep an input log that can be replayed later.
    #[serde(default)]
    pub record: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            tick_hz: default_tick_hz(),
            deadzone: default_deadzone(),
            ood_radius: default_ood_radius(),
            history_capacity: default_history(),
            stream_buffer: default_stream_buffer(),
            record: false,
        }
    }
}

/// One executed tick.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub tick: u64,
    pub t_ms: f64,
    /// State the action was applied in.
    pub state: JointState,
    pub z: DVector<f64>,
    pub action: DVector<f64>,
}

/// What a client message produced: events for the sender only and events
/// for every subscriber.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Applied {
    pub reply: Vec<ServerEvent>,
    pub broadcast: Vec<ServerEvent>,
}

pub struct Session {
    model: Arc<TrainedModel>,
    start: JointState,
    state: JointState,
    z: DVector<f64>,
    paused: bool,
    fault: Option<String>,
    ood_active: bool,
    /// Ticks since the last reset.
    tick: u64,
    /// Ticks since creation; orders entries of the input log.
    clock: u64,
    history: VecDeque<HistoryEntry>,
    log: Option<Vec<LogEntry>>,
    config: SessionConfig,
}

/// Clamps each component into [-1, 1], then zeroes those inside the
/// deadzone. Returns the result and whether any clamping happened.
pub fn condition_input(z: &[f64], deadzone: f64) -> (Vec<f64>, bool) {
    let mut clamped = false;
    let out = z
        .iter()
        .map(|&v| {
            let c = v.clamp(-1.0, 1.0);
            clamped |= c != v;
            if c.abs() < deadzone {
                0.0
            } else {
                c
            }
        })
        .collect();
    (out, clamped)
}

pub fn ee_poses(geometry: &ArmGeometry, state: &JointState) -> latact_core::Result<Vec<[f64; 3]>> {
    (0..geometry.arm_count)
        .map(|arm| {
            let p = geometry.forward_kinematics(state, arm)?;
            Ok([p.position.x, p.position.y, p.orientation])
        })
        .collect()
}

impl Session {
    /// A paused session at `start` with zero input.
    pub fn new(model: Arc<TrainedModel>, task_geometry: &ArmGeometry, start: JointState, config: SessionConfig) -> Result<Self, SessionError> {
        if model.geometry != *task_geometry {
            return Err(SessionError::GeometryMismatch(format!(
                "model has {} joints, task has {}",
                model.geometry.dof(),
                task_geometry.dof()
            )));
        }
        if start.angles.len() != task_geometry.dof() {
            return Err(latact_core::Error::dim("start state", task_geometry.dof(), start.angles.len()).into());
        }
        let d = model.latent_dim();
        Ok(Session {
            log: config.record.then(Vec::new),
            model,
            state: start.clone(),
            start,
            z: DVector::zeros(d),
            paused: true,
            fault: None,
            ood_active: false,
            tick: 0,
            clock: 0,
            history: VecDeque::new(),
            config,
        })
    }

    pub fn state(&self) -> &JointState {
        &self.state
    }

    pub fn start(&self) -> &JointState {
        &self.start
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn fault(&self) -> Option<&str> {
        self.fault.as_deref()
    }

    pub fn input(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn history(&self) -> &VecDeque<HistoryEntry> {
        &self.history
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn model(&self) -> &TrainedModel {
        &self.model
    }

    fn t_ms(&self) -> f64 {
        self.tick as f64 * self.model.geometry.dt * 1000.0
    }

    /// Replaces the pending input. Takes effect on the next tick.
    pub fn submit_input(&mut self, z: &[f64]) -> Result<(Vec<f64>, bool), SessionError> {
        let d = self.model.latent_dim();
        if z.len() != d {
            return Err(SessionError::InputDimension {
                expected: d,
                actual: z.len(),
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(SessionError::NonFiniteInput);
        }
        let (conditioned, clamped) = condition_input(z, self.config.deadzone);
        self.z = DVector::from_vec(conditioned.clone());
        Ok((conditioned, clamped))
    }

    pub fn pause(&mut self) -> Option<ServerEvent> {
        if self.paused {
            return None;
        }
        self.paused = true;
        Some(ServerEvent::Lifecycle {
            event: Lifecycle::Paused,
        })
    }

    /// Starts ticking again, clearing any fault. No-op when already running.
    pub fn resume(&mut self) -> Option<ServerEvent> {
        if !self.paused {
            return None;
        }
        self.paused = false;
        self.fault = None;
        Some(ServerEvent::Lifecycle {
            event: Lifecycle::Resumed,
        })
    }

    /// Back to the start state with zero input and empty history. The
    /// paused flag and any fault are kept.
    pub fn reset(&mut self) -> ServerEvent {
        self.state = self.start.clone();
        self.z = DVector::zeros(self.model.latent_dim());
        self.tick = 0;
        self.history.clear();
        self.ood_active = false;
        ServerEvent::Lifecycle {
            event: Lifecycle::Reset,
        }
    }

    /// Action the loop would command at the current state and input.
    /// Exactly zero input commands exactly zero motion.
    pub fn commanded_action(&self) -> latact_core::Result<JointVelocityAction> {
        let n = self.model.geometry.dof();
        if self.z.iter().all(|&v| v == 0.0) {
            return Ok(JointVelocityAction::zeros(n));
        }
        let a = self.model.decode(&self.z, &self.state)?;
        Ok(a.capped(self.model.geometry.action_cap))
    }

    /// Runs one control tick. Paused or faulted sessions do nothing.
    pub fn tick(&mut self) -> Vec<ServerEvent> {
        self.clock += 1;
        if self.paused {
            return Vec::new();
        }
        let action = match self.commanded_action() {
            Ok(a) if a.is_finite() => a,
            Ok(_) => return self.raise_fault("decoder produced a non-finite action".into()),
            Err(e) => return self.raise_fault(e.to_string()),
        };
        let next = match self.model.geometry.step(&self.state, &action) {
            Ok(s) => s,
            Err(e) => return self.raise_fault(e.to_string()),
        };
        if self.history.len() == self.config.history_capacity {
            self.history.pop_front();
        }
        if self.config.history_capacity > 0 {
            self.history.push_back(HistoryEntry {
                tick: self.tick,
                t_ms: self.t_ms(),
                state: self.state.clone(),
                z: self.z.clone(),
                action: action.velocities.clone(),
            });
        }
        self.state = next;
        self.tick += 1;
        let mut events = vec![ServerEvent::State {
            t: self.t_ms(),
            tick: self.tick,
            q: self.state.angles.as_slice().to_vec(),
            ee: ee_poses(&self.model.geometry, &self.state).unwrap_or_default(),
            z: self.z.as_slice().to_vec(),
            a: action.velocities.as_slice().to_vec(),
        }];
        if let Some(radius) = self.config.ood_radius {
            if let Ok(distance) = self.model.novelty(&self.state) {
                let outside = distance > radius;
                if outside && !self.ood_active {
                    events.push(ServerEvent::WarnOod {
                        tick: self.tick,
                        distance,
                        radius,
                    });
                }
                self.ood_active = outside;
            }
        }
        events
    }

    fn raise_fault(&mut self, reason: String) -> Vec<ServerEvent> {
        log::warn!("session fault: {reason}");
        self.paused = true;
        self.fault = Some(reason.clone());
        vec![ServerEvent::Fault {
            reason,
            tick: self.tick,
        }]
    }

    /// Handles one client message, recording it in the input log.
    pub fn apply(&mut self, msg: &ClientMessage) -> Applied {
        let mut out = Applied::default();
        match msg {
            ClientMessage::Input { z, t } => match self.submit_input(z) {
                Ok((z, clamped)) => out.reply.push(ServerEvent::Ack { z, clamped, t: *t }),
                Err(e) => {
                    out.reply.push(ServerEvent::Error { message: e.to_string() });
                    return out;
                }
            },
            ClientMessage::Pause => out.broadcast.extend(self.pause()),
            ClientMessage::Resume => out.broadcast.extend(self.resume()),
            ClientMessage::Reset => out.broadcast.push(self.reset()),
            ClientMessage::Step { count } => {
                // steps are captured by the clock, not logged
                for _ in 0..*count {
                    out.broadcast.extend(self.tick());
                }
                return out;
            }
        }
        if let Some(log) = &mut self.log {
            log.push(LogEntry {
                clock: self.clock,
                msg: msg.clone(),
            });
        }
        out
    }

    /// The recorded input log up to now, if recording is enabled.
    pub fn input_log(&self) -> Option<InputLog> {
        self.log.as_ref().map(|entries| InputLog {
            latent_dim: self.model.latent_dim(),
            start: self.start.angles.as_slice().to_vec(),
            entries: entries.clone(),
            end_clock: self.clock,
            final_state: self.state.angles.as_slice().to_vec(),
        })
    }
}
