//! HTTP and WebSocket front end. Every session runs its control loop on its
//! own task; clients talk to it through a command queue and listen on a
//! bounded broadcast stream, so a slow client can never stall the loop.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use latact_core::arm::JointState;
use latact_core::demo::{generate, TaskParams, TaskSpec};
use latact_core::models::TrainedModel;
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, mpsc, oneshot};

use crate::protocol::{ClientMessage, Lifecycle, ServerEvent};
use crate::session::{Session, SessionConfig, SessionError};

/// A task the service can start sessions on.
#[derive(Debug, Clone)]
pub struct TaskEntry {
    pub spec: TaskSpec,
    pub start: JointState,
}

/// Where a session begins: the fixed start of reaching tasks, otherwise the
/// first state of the task's first demonstration.
pub fn task_start_state(spec: &TaskSpec) -> latact_core::Result<JointState> {
    if let TaskParams::Reach { start_state, .. } = &spec.task {
        return JointState::new(start_state.clone());
    }
    let mut one = spec.clone();
    one.target_pair_count = spec.trajectory_length;
    let ds = generate(&one)?;
    Ok(ds.pairs[0].state.clone())
}

impl TaskEntry {
    pub fn new(spec: TaskSpec) -> latact_core::Result<Self> {
        let start = task_start_state(&spec)?;
        Ok(TaskEntry { spec, start })
    }
}

/// Models and tasks offered by a server, keyed by name.
#[derive(Default, Clone)]
pub struct Registry {
    pub models: BTreeMap<String, Arc<TrainedModel>>,
    pub tasks: BTreeMap<String, TaskEntry>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelInfo {
    pub name: String,
    pub kind: String,
    pub latent_dim: usize,
    pub dof: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct TaskInfo {
    pub name: String,
    pub kind: String,
    pub latent_dim: usize,
    pub dof: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateSession {
    pub model: String,
    pub task: String,
    /// Overrides the server's tick rate; 0 selects lockstep.
    #[serde(default)]
    pub tick_hz: Option<f64>,
    #[serde(default)]
    pub record: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
}

enum Command {
    Client {
        msg: ClientMessage,
        reply: oneshot::Sender<Vec<ServerEvent>>,
    },
    Log(oneshot::Sender<Option<String>>),
    Close,
}

#[derive(Clone)]
struct SessionHandle {
    commands: mpsc::UnboundedSender<Command>,
    events: broadcast::Sender<ServerEvent>,
}

/// Shared server state.
pub struct Service {
    registry: Registry,
    defaults: SessionConfig,
    sessions: Mutex<HashMap<String, SessionHandle>>,
    next_id: AtomicU64,
}

impl Service {
    pub fn new(registry: Registry, defaults: SessionConfig) -> Arc<Self> {
        Arc::new(Service {
            registry,
            defaults,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    pub fn models(&self) -> Vec<ModelInfo> {
        self.registry
            .models
            .iter()
            .map(|(name, m)| ModelInfo {
                name: name.clone(),
                kind: m.kind().name().to_string(),
                latent_dim: m.latent_dim(),
                dof: m.geometry.dof(),
            })
            .collect()
    }

    pub fn tasks(&self) -> Vec<TaskInfo> {
        self.registry
            .tasks
            .iter()
            .map(|(name, t)| TaskInfo {
                name: name.clone(),
                kind: t.spec.kind().name().to_string(),
                latent_dim: t.spec.latent_dim_intended,
                dof: t.spec.geometry.dof(),
            })
            .collect()
    }

    /// Starts a paused session and its control loop. Must run inside a
    /// Tokio runtime.
    pub fn create_session(&self, req: &CreateSession) -> Result<String, ServiceError> {
        let model = self
            .registry
            .models
            .get(&req.model)
            .ok_or_else(|| ServiceError::NotFound(format!("model `{}`", req.model)))?;
        let task = self
            .registry
            .tasks
            .get(&req.task)
            .ok_or_else(|| ServiceError::NotFound(format!("task `{}`", req.task)))?;
        let mut config = self.defaults.clone();
        if let Some(hz) = req.tick_hz {
            if !(hz >= 0.0 && hz.is_finite()) {
                return Err(ServiceError::BadRequest("tick_hz must be >= 0".into()));
            }
            config.tick_hz = hz;
        }
        if let Some(record) = req.record {
            config.record = record;
        }
        let session = Session::new(model.clone(), &task.spec.geometry, task.start.clone(), config.clone())
            .map_err(|e| ServiceError::Unprocessable(e.to_string()))?;
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let (cmd_tx, cmd_rx) = mpsc::unbounded_channel();
        let (event_tx, _) = broadcast::channel(config.stream_buffer.max(1));
        tokio::spawn(control_loop(session, cmd_rx, event_tx.clone()));
        self.sessions.lock().expect("session map poisoned").insert(
            id.clone(),
            SessionHandle {
                commands: cmd_tx,
                events: event_tx,
            },
        );
        log::info!("session {id}: model {} on task {}", req.model, req.task);
        Ok(id)
    }

    fn handle(&self, id: &str) -> Result<SessionHandle, SessionError> {
        self.sessions
            .lock()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }

    /// Sends a client message to a session and waits for the sender's reply.
    pub async fn send(&self, id: &str, msg: ClientMessage) -> Result<Vec<ServerEvent>, SessionError> {
        let handle = self.handle(id)?;
        let (tx, rx) = oneshot::channel();
        handle
            .commands
            .send(Command::Client { msg, reply: tx })
            .map_err(|_| SessionError::UnknownSession(id.to_string()))?;
        rx.await.map_err(|_| SessionError::UnknownSession(id.to_string()))
    }

    pub fn subscribe(&self, id: &str) -> Result<broadcast::Receiver<ServerEvent>, SessionError> {
        Ok(self.handle(id)?.events.subscribe())
    }

    /// The session's input log as JSON Lines, if it records one.
    pub async fn input_log(&self, id: &str) -> Result<Option<String>, SessionError> {
        let handle = self.handle(id)?;
        let (tx, rx) = oneshot::channel();
        handle
            .commands
            .send(Command::Log(tx))
            .map_err(|_| SessionError::UnknownSession(id.to_string()))?;
        rx.await.map_err(|_| SessionError::UnknownSession(id.to_string()))
    }

    /// Stops every control loop; subscribers get a `closed` lifecycle event.
    pub fn close_all(&self) {
        let sessions: Vec<_> = self.sessions.lock().expect("session map poisoned").drain().collect();
        for (id, handle) in sessions {
            log::info!("closing session {id}");
            let _ = handle.commands.send(Command::Close);
        }
    }
}

async fn control_loop(mut session: Session, mut commands: mpsc::UnboundedReceiver<Command>, events: broadcast::Sender<ServerEvent>) {
    let hz = session.config().tick_hz;
    let mut ticker = (hz > 0.0).then(|| {
        let mut t = tokio::time::interval(Duration::from_secs_f64(1.0 / hz));
        t.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        t
    });
    // sending only fails when nobody listens, which is fine
    let publish = |list: Vec<ServerEvent>| {
        for e in list {
            let _ = events.send(e);
        }
    };
    loop {
        tokio::select! {
            biased;
            cmd = commands.recv() => match cmd {
                Some(Command::Client { msg, reply }) => {
                    let applied = session.apply(&msg);
                    let _ = reply.send(applied.reply);
                    publish(applied.broadcast);
                }
                Some(Command::Log(reply)) => {
                    let _ = reply.send(session.input_log().map(|l| l.to_jsonl()));
                }
                Some(Command::Close) | None => break,
            },
            _ = async { ticker.as_mut().expect("guarded").tick().await }, if ticker.is_some() => {
                publish(session.tick());
            }
        }
    }
    publish(vec![ServerEvent::Lifecycle {
        event: Lifecycle::Closed,
    }]);
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Unprocessable(String),
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

/// Routes of the teleoperation API, plus static files from `ui_dir` when given.
pub fn router(service: Arc<Service>, ui_dir: Option<PathBuf>) -> Router {
    let app = Router::new()
        .route("/models", get(list_models))
        .route("/tasks", get(list_tasks))
        .route("/sessions", post(create))
        .route("/sessions/{id}/log", get(session_log))
        .route("/session/{id}", get(connect))
        .with_state(service);
    match ui_dir {
        Some(dir) => app.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => app,
    }
}

async fn list_models(State(service): State<Arc<Service>>) -> Json<Vec<ModelInfo>> {
    Json(service.models())
}

async fn list_tasks(State(service): State<Arc<Service>>) -> Json<Vec<TaskInfo>> {
    Json(service.tasks())
}

async fn create(State(service): State<Arc<Service>>, Json(req): Json<CreateSession>) -> Result<(StatusCode, Json<Created>), ServiceError> {
    let id = service.create_session(&req)?;
    Ok((StatusCode::CREATED, Json(Created { id })))
}

async fn session_log(State(service): State<Arc<Service>>, Path(id): Path<String>) -> Result<String, ServiceError> {
    match service.input_log(&id).await {
        Ok(Some(text)) => Ok(text),
        Ok(None) => Err(ServiceError::NotFound(format!("session `{id}` does not record input"))),
        Err(e) => Err(ServiceError::NotFound(e.to_string())),
    }
}

async fn connect(State(service): State<Arc<Service>>, Path(id): Path<String>, ws: WebSocketUpgrade) -> Response {
    match service.subscribe(&id) {
        Ok(events) => ws.on_upgrade(move |socket| client_loop(socket, service, id, events)),
        Err(e) => ServiceError::NotFound(e.to_string()).into_response(),
    }
}

fn encode(event: &ServerEvent) -> Message {
    Message::Text(serde_json::to_string(event).expect("events serialize").into())
}

async fn client_loop(socket: WebSocket, service: Arc<Service>, id: String, mut events: broadcast::Receiver<ServerEvent>) {
    let (mut sink, mut stream) = socket.split();
    // bounded, so a client that stops reading makes its broadcast receiver lag
    let (out_tx, mut out_rx) = mpsc::channel::<Message>(service.defaults.stream_buffer.max(1));

    let forward_tx = out_tx.clone();
    let forward = tokio::spawn(async move {
        loop {
            match events.recv().await {
                Ok(event) => {
                    let closed = matches!(
                        event,
                        ServerEvent::Lifecycle {
                            event: Lifecycle::Closed
                        }
                    );
                    if forward_tx.send(encode(&event)).await.is_err() || closed {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(missed)) => {
                    let _ = forward_tx.send(encode(&ServerEvent::Overflow { missed })).await;
                    break;
                }
                Err(broadcast::error::RecvError::Closed) => break,
            }
        }
        let _ = forward_tx.send(Message::Close(None)).await;
    });

    let writer = tokio::spawn(async move {
        while let Some(msg) = out_rx.recv().await {
            let close = matches!(msg, Message::Close(_));
            if sink.send(msg).await.is_err() || close {
                break;
            }
        }
    });

    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let replies = match serde_json::from_str::<ClientMessage>(&text) {
            Ok(msg) => match service.send(&id, msg).await {
                Ok(r) => r,
                Err(e) => vec![ServerEvent::Error { message: e.to_string() }],
            },
            Err(e) => vec![ServerEvent::Error {
                message: format!("bad message: {e}"),
            }],
        };
        for r in replies {
            if out_tx.send(encode(&r)).await.is_err() {
                break;
            }
        }
        if writer.is_finished() {
            break;
        }
    }
    forward.abort();
    drop(out_tx);
    let _ = writer.await;
}

/// Serves `router` on `listener` until `shutdown` resolves, then closes all
/// sessions so connected clients see a `closed` event.
pub async fn serve<F>(listener: tokio::net::TcpListener, service: Arc<Service>, ui_dir: Option<PathBuf>, shutdown: F) -> std::io::Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    let app = router(service.clone(), ui_dir);
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            shutdown.await;
            service.close_all();
        })
        .await
}
