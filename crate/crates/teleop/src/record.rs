//! Recorded input logs and their bitwise replay.
//!
//! A log is JSON Lines: a header, one line per client message tagged with
//! the session clock (ticks since creation) at which it arrived, and an end
//! line carrying the clock and the final joint state.

use std::io::{BufRead, Write};
use std::sync::Arc;

use latact_core::arm::{ArmGeometry, JointState};
use latact_core::models::TrainedModel;
use serde::{Deserialize, Serialize};

use crate::protocol::ClientMessage;
use crate::session::{Session, SessionConfig, SessionError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub clock: u64,
    pub msg: ClientMessage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputLog {
    pub latent_dim: usize,
    pub start: Vec<f64>,
    pub entries: Vec<LogEntry>,
    pub end_clock: u64,
    pub final_state: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header { latent_dim: usize, start: Vec<f64> },
    Input(LogEntry),
    End { clock: u64, q: Vec<f64> },
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("log is missing its {0} line")]
    Missing(&'static str),
    #[error("log entries are not ordered by clock at line {0}")]
    Unordered(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl InputLog {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), LogError> {
        let header = Line::Header {
            latent_dim: self.latent_dim,
            start: self.start.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        for e in &self.entries {
            writeln!(out, "{}", serde_json::to_string(&Line::Input(e.clone()))?)?;
        }
        let end = Line::End {
            clock: self.end_clock,
            q: self.final_state.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&end)?)?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<InputLog, LogError> {
        let mut header = None;
        let mut entries: Vec<LogEntry> = Vec::new();
        let mut end = None;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line).map_err(|source| LogError::Parse { line: i + 1, source })?;
            match parsed {
                Line::Header { latent_dim, start } => header = Some((latent_dim, start)),
                Line::Input(e) => {
                    if entries.last().is_some_and(|prev| prev.clock > e.clock) {
                        return Err(LogError::Unordered(i + 1));
                    }
                    entries.push(e)
                }
                Line::End { clock, q } => end = Some((clock, q)),
            }
        }
        let (latent_dim, start) = header.ok_or(LogError::Missing("header"))?;
        let (end_clock, final_state) = end.ok_or(LogError::Missing("end"))?;
        Ok(InputLog {
            latent_dim,
            start,
            entries,
            end_clock,
            final_state,
        })
    }
}

/// Outcome of replaying a log.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayResult {
    /// State after every executed tick, in order.
    pub states: Vec<JointState>,
    pub final_state: JointState,
    /// Final state equals the recorded one bit for bit.
    pub matches: bool,
}

/// Re-runs `log` on a fresh session of `model`, ticking the clock exactly as
/// during recording.
pub fn replay(log: &InputLog, model: Arc<TrainedModel>, geometry: &ArmGeometry, config: &SessionConfig) -> Result<ReplayResult, SessionError> {
    let start = JointState::new(log.start.clone())?;
    let config = SessionConfig {
        record: false,
        ..config.clone()
    };
    let mut session = Session::new(model, geometry, start, config)?;
    let mut states = Vec::new();
    let mut clock = 0;
    for entry in &log.entries {
        run_until(&mut session, entry.clock, &mut clock, &mut states);
        session.apply(&entry.msg);
    }
    run_until(&mut session, log.end_clock, &mut clock, &mut states);
    let final_state = session.state().clone();
    let matches = final_state.angles.len() == log.final_state.len()
        && final_state
            .angles
            .iter()
            .zip(&log.final_state)
            .all(|(a, b)| a.to_bits() == b.to_bits());
    Ok(ReplayResult {
        states,
        final_state,
        matches,
    })
}

fn run_until(session: &mut Session, target: u64, clock: &mut u64, states: &mut Vec<JointState>) {
    while *clock < target {
        let before = session.tick_count();
        session.tick();
        if session.tick_count() != before {
            states.push(session.state().clone());
        }
        *clock += 1;
    }
}
