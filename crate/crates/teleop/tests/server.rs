use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use latact_core::demo::{generate, TaskKind, TaskSpec};
use latact_core::models::{train, ModelConfig, ModelKind};
use latact_teleop::service::{CreateSession, Created, ModelInfo, TaskInfo};
use latact_teleop::{replay, serve, InputLog, Registry, ServerEvent, Service, SessionConfig, TaskEntry};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

fn registry() -> Registry {
    let mut sine = TaskSpec::preset(TaskKind::Sine);
    sine.target_pair_count = 300;
    let ds = generate(&sine).unwrap();
    let mut reg = Registry::default();
    let mut cae = ModelConfig::new(ModelKind::Cae, 1);
    cae.epochs = 3;
    cae.hidden_sizes = vec![16];
    reg.models
        .insert("sine-pca".into(), Arc::new(train(&ModelConfig::new(ModelKind::Pca, 1), &ds).unwrap()));
    reg.models.insert("sine-cae".into(), Arc::new(train(&cae, &ds).unwrap()));
    reg.tasks.insert("sine".into(), TaskEntry::new(sine).unwrap());
    reg.tasks
        .insert("rotate".into(), TaskEntry::new(TaskSpec::preset(TaskKind::Rotate)).unwrap());
    reg
}

struct Server {
    base: String,
    ws: String,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    handle: tokio::task::JoinHandle<std::io::Result<()>>,
}

async fn start(config: SessionConfig) -> Server {
    let service = Service::new(registry(), config);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let handle = tokio::spawn(serve(listener, service, None, async {
        let _ = rx.await;
    }));
    Server {
        base: format!("http://{addr}"),
        ws: format!("ws://{addr}"),
        stop: Some(tx),
        handle,
    }
}

async fn create(server: &Server, model: &str, task: &str, tick_hz: f64) -> reqwest::Response {
    reqwest::Client::new()
        .post(format!("{}/sessions", server.base))
        .json(&CreateSession {
            model: model.into(),
            task: task.into(),
            tick_hz: Some(tick_hz),
            record: Some(true),
        })
        .send()
        .await
        .unwrap()
}

async fn session_id(server: &Server, tick_hz: f64) -> String {
    let resp = create(server, "sine-cae", "sine", tick_hz).await;
    assert_eq!(resp.status(), 201);
    resp.json::<Created>().await.unwrap().id
}

async fn connect(server: &Server, id: &str) -> Ws {
    connect_async(format!("{}/session/{id}", server.ws)).await.unwrap().0
}

async fn send(ws: &mut Ws, json: &str) {
    ws.send(Message::text(json)).await.unwrap();
}

async fn next_event(ws: &mut Ws) -> Option<ServerEvent> {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next()).await.expect("event within 10 s")?;
        match msg.ok()? {
            Message::Text(t) => return Some(serde_json::from_str(&t).unwrap()),
            Message::Close(_) => return None,
            _ => continue,
        }
    }
}

/// Events until (and including) the first one matching `stop`.
async fn collect_until(ws: &mut Ws, stop: impl Fn(&ServerEvent) -> bool) -> Vec<ServerEvent> {
    let mut out = Vec::new();
    while let Some(e) = next_event(ws).await {
        let done = stop(&e);
        out.push(e);
        if done {
            break;
        }
    }
    out
}

fn is_state(e: &ServerEvent, n: u64) -> bool {
    matches!(e, ServerEvent::State { tick, .. } if *tick == n)
}

#[tokio::test]
async fn lists_models_and_tasks() {
    let server = start(SessionConfig::default()).await;
    let models: Vec<ModelInfo> = reqwest::get(format!("{}/models", server.base)).await.unwrap().json().await.unwrap();
    let names: Vec<&str> = models.iter().map(|m| m.name.as_str()).collect();
    assert_eq!(names, ["sine-cae", "sine-pca"]);
    assert_eq!(models[0].kind, "cAE");
    let tasks: Vec<TaskInfo> = reqwest::get(format!("{}/tasks", server.base)).await.unwrap().json().await.unwrap();
    assert_eq!(tasks.len(), 2);
    assert!(tasks.iter().any(|t| t.name == "rotate" && t.dof == 10));
}

#[tokio::test]
async fn session_creation_errors_and_distinct_ids() {
    let server = start(SessionConfig::default()).await;
    assert_eq!(create(&server, "nope", "sine", 0.0).await.status(), 404);
    assert_eq!(create(&server, "sine-pca", "nope", 0.0).await.status(), 404);
    assert_eq!(create(&server, "sine-pca", "rotate", 0.0).await.status(), 422);
    let a = session_id(&server, 0.0).await;
    let b = session_id(&server, 0.0).await;
    assert_ne!(a, b);
    assert!(connect_async(format!("{}/session/missing", server.ws)).await.is_err());
}

#[tokio::test]
async fn lockstep_ticks_are_streamed_in_order_to_every_subscriber() {
    let server = start(SessionConfig::default()).await;
    let id = session_id(&server, 0.0).await;
    let mut a = connect(&server, &id).await;
    let mut b = connect(&server, &id).await;
    send(&mut a, r#"{"type":"resume"}"#).await;
    send(&mut a, r#"{"type":"input","z":[1.7],"t":5}"#).await;
    send(&mut a, r#"{"type":"step","count":10}"#).await;

    let from_a = collect_until(&mut a, |e| is_state(e, 10)).await;
    let from_b = collect_until(&mut b, |e| is_state(e, 10)).await;
    assert!(from_a.contains(&ServerEvent::Ack {
        z: vec![1.0],
        clamped: true,
        t: Some(5.0)
    }));
    // acknowledgements go to the sender only
    let broadcast_only: Vec<_> = from_a.iter().filter(|e| !matches!(e, ServerEvent::Ack { .. })).cloned().collect();
    assert_eq!(broadcast_only, from_b);
    let times: Vec<f64> = from_b
        .iter()
        .filter_map(|e| match e {
            ServerEvent::State { t, z, .. } => {
                assert_eq!(z, &vec![1.0]);
                Some(*t)
            }
            _ => None,
        })
        .collect();
    assert_eq!(times.len(), 10);
    assert!(times.windows(2).all(|w| w[1] > w[0]));
}

#[tokio::test]
async fn bad_messages_get_an_error_reply() {
    let server = start(SessionConfig::default()).await;
    let id = session_id(&server, 0.0).await;
    let mut ws = connect(&server, &id).await;
    send(&mut ws, r#"{"type":"jump"}"#).await;
    assert!(matches!(next_event(&mut ws).await, Some(ServerEvent::Error { .. })));
    send(&mut ws, r#"{"type":"input","z":[0.1,0.2]}"#).await;
    assert!(matches!(next_event(&mut ws).await, Some(ServerEvent::Error { .. })));
}

#[tokio::test]
async fn real_time_sessions_tick_on_their_own() {
    let server = start(SessionConfig::default()).await;
    let id = session_id(&server, 200.0).await;
    let mut ws = connect(&server, &id).await;
    send(&mut ws, r#"{"type":"resume"}"#).await;
    send(&mut ws, r#"{"type":"input","z":[0.5]}"#).await;
    let events = collect_until(&mut ws, |e| is_state(e, 20)).await;
    assert!(events.iter().filter(|e| matches!(e, ServerEvent::State { .. })).count() >= 5);
    send(&mut ws, r#"{"type":"pause"}"#).await;
    collect_until(&mut ws, |e| matches!(e, ServerEvent::Lifecycle { .. })).await;
}

#[tokio::test]
async fn slow_subscriber_is_dropped_without_disturbing_the_session() {
    let server = start(SessionConfig {
        stream_buffer: 8,
        ..Default::default()
    })
    .await;
    let id = session_id(&server, 0.0).await;
    let mut slow = connect(&server, &id).await;
    let mut driver = connect(&server, &id).await;
    send(&mut driver, r#"{"type":"resume"}"#).await;
    send(&mut driver, r#"{"type":"input","z":[0.3]}"#).await;
    send(&mut driver, r#"{"type":"step","count":500}"#).await;

    let seen = collect_until(&mut slow, |e| matches!(e, ServerEvent::Overflow { .. })).await;
    assert!(matches!(seen.last(), Some(ServerEvent::Overflow { .. })));
    assert!(next_event(&mut slow).await.is_none(), "slow subscriber is disconnected");

    // a fresh subscriber still sees the session advancing
    let mut fresh = connect(&server, &id).await;
    send(&mut fresh, r#"{"type":"step","count":1}"#).await;
    let events = collect_until(&mut fresh, |e| matches!(e, ServerEvent::State { .. })).await;
    assert!(matches!(events.last(), Some(ServerEvent::State { tick, .. }) if *tick == 501));
}

#[tokio::test]
async fn scripted_client_log_replays_to_the_same_final_state() {
    let server = start(SessionConfig::default()).await;
    let id = session_id(&server, 0.0).await;
    let mut ws = connect(&server, &id).await;
    send(&mut ws, r#"{"type":"resume"}"#).await;
    for k in 0..40 {
        let z = (k as f64 * 0.4).sin();
        send(&mut ws, &format!(r#"{{"type":"input","z":[{z}]}}"#)).await;
        send(&mut ws, r#"{"type":"step","count":3}"#).await;
    }
    let events = collect_until(&mut ws, |e| is_state(e, 120)).await;
    let last_q = events
        .iter()
        .rev()
        .find_map(|e| match e {
            ServerEvent::State { q, .. } => Some(q.clone()),
            _ => None,
        })
        .unwrap();
    let text = reqwest::get(format!("{}/sessions/{id}/log", server.base)).await.unwrap().text().await.unwrap();
    let log = InputLog::read_jsonl(text.as_bytes()).unwrap();
    assert_eq!(log.final_state, last_q);
    let reg = registry();
    let spec = &reg.tasks["sine"].spec;
    let out = replay(&log, reg.models["sine-cae"].clone(), &spec.geometry, &SessionConfig::default()).unwrap();
    assert!(out.matches);
    assert_eq!(out.states.len(), 120);
}

#[tokio::test]
async fn shutdown_closes_sessions_with_a_lifecycle_event() {
    let mut server = start(SessionConfig::default()).await;
    let id = session_id(&server, 0.0).await;
    let mut ws = connect(&server, &id).await;
    server.stop.take().unwrap().send(()).unwrap();
    let events = collect_until(&mut ws, |_| false).await;
    assert_eq!(
        events.last(),
        Some(&ServerEvent::Lifecycle {
            event: latact_teleop::Lifecycle::Closed
        })
    );
    tokio::time::timeout(Duration::from_secs(10), server.handle).await.unwrap().unwrap().unwrap();
}
