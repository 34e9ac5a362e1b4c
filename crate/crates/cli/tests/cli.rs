use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::Arc;

use latact_core::demo::DemoDataset;
use latact_core::models::TrainedModel;
use latact_teleop::{task_start_state, ClientMessage, Session, SessionConfig};

fn latact() -> Command {
    Command::new(env!("CARGO_BIN_EXE_latact"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    latact().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Shipped task config with a smaller pair count.
fn small_task(dir: &Path, name: &str, pairs: usize) -> PathBuf {
    let text = std::fs::read_to_string(configs().join(format!("tasks/{name}.toml"))).unwrap();
    let text = text.replace("target_pair_count = 10000", &format!("target_pair_count = {pairs}"));
    let path = dir.join(format!("{name}.toml"));
    std::fs::write(&path, text).unwrap();
    path
}

fn fast_model(dir: &Path, kind: &str) -> PathBuf {
    let path = dir.join(format!("{kind}.toml"));
    std::fs::write(&path, format!("kind = \"{kind}\"\nlatent_dim = 1\nepochs = 3\nhidden_sizes = [16]\n")).unwrap();
    path
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = run(&["gen-data", "--task", "/nonexistent/sine.toml", "--out", "/tmp/x.ds"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read task config"));
    assert_eq!(code(&run(&["train"])), 2);
    assert_eq!(code(&run(&["no-such-command"])), 2);
}

#[test]
fn gen_data_writes_the_full_dataset_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ds");
    let b = dir.path().join("b.ds");
    let task = configs().join("tasks/sine.toml");
    let out = run(&["gen-data", "--task", p(&task), "--out", p(&a)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("10000 pairs"));
    assert!(stdout(&out).contains("(ok)"));
    assert_eq!(DemoDataset::load(&a).unwrap().len(), 10_000);
    assert_eq!(code(&run(&["gen-data", "--task", p(&task), "--out", p(&b)])), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let c = dir.path().join("c.ds");
    let small = small_task(dir.path(), "sine", 300);
    assert_eq!(code(&run(&["gen-data", "--task", p(&small), "--seed", "9", "--out", p(&c)])), 0);
    assert_eq!(DemoDataset::load(&c).unwrap().spec.rng_seed, 9);
}

#[test]
fn gen_data_exports_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let task = small_task(dir.path(), "reach", 100);
    let out = dir.path().join("reach.jsonl");
    assert_eq!(code(&run(&["gen-data", "--task", p(&task), "--format", "jsonl", "--out", p(&out)])), 0);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 100);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(first["s"].is_array() && first["a"].is_array() && first["traj"] == 0);
}

#[test]
fn train_and_align_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let task = small_task(dir.path(), "circle", 400);
    let data = dir.path().join("circle.ds");
    let model = dir.path().join("pca.lam");
    assert_eq!(code(&run(&["gen-data", "--task", p(&task), "--out", p(&data)])), 0);
    let out = run(&["train", "--model", p(&configs().join("models/pca.toml")), "--data", p(&data), "--out", p(&model)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("d=2"));
    assert!(stdout(&out).contains("test MSE"));

    let bad = run(&["align", "--model", p(&model), "--matrix", "1,0.2,0,1"]);
    assert_eq!(code(&bad), 2);
    let wrong_size = run(&["align", "--model", p(&model), "--matrix", "1,0,0"]);
    assert_eq!(code(&wrong_size), 2);

    let swapped = dir.path().join("swapped.lam");
    let out = run(&["align", "--model", p(&model), "--matrix", "0,-1,1,0", "--out", p(&swapped)]);
    assert_eq!(code(&out), 0);
    let m = TrainedModel::load(&swapped).unwrap();
    assert_eq!(m.alignment().as_slice(), &[0.0, 1.0, -1.0, 0.0]);

    // auto alignment from either starting frame lands on the same transform
    let auto_a = dir.path().join("auto_a.lam");
    let auto_b = dir.path().join("auto_b.lam");
    assert_eq!(code(&run(&["align", "--model", p(&model), "--data", p(&data), "--auto", "--out", p(&auto_a)])), 0);
    assert_eq!(code(&run(&["align", "--model", p(&swapped), "--data", p(&data), "--auto", "--out", p(&auto_b)])), 0);
    let qa = TrainedModel::load(&auto_a).unwrap().alignment().clone();
    let qb = TrainedModel::load(&auto_b).unwrap().alignment().clone();
    assert!((qa - qb).amax() < 1e-9);
    assert_eq!(code(&run(&["align", "--model", p(&model), "--auto"])), 2);
}

#[test]
fn eval_pca_alone_is_the_reference_and_plots_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let task = small_task(dir.path(), "reach", 500);
    let out_dir = dir.path().join("report");
    let out = run(&[
        "eval",
        "--models",
        p(&configs().join("models/pca.toml")),
        "--tasks",
        p(&task),
        "--metrics",
        p(&configs().join("metrics.toml")),
        "--seeds",
        "0-1",
        "--pairs",
        "20",
        "--emit-plots",
        "--out",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert!((row["normalized_mse"].as_f64().unwrap() - 100.0).abs() < 1e-9);
    }
    let svgs: Vec<_> = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "svg"))
        .collect();
    assert!(svgs.len() >= 2);
    assert!(svgs.iter().all(|p| std::fs::metadata(p).unwrap().len() > 100));
    assert!(std::fs::read_to_string(out_dir.join("report.csv")).unwrap().starts_with("task,"));
}

#[test]
fn eval_exits_nonzero_only_when_everything_fails() {
    let dir = tempfile::tempdir().unwrap();
    let task = small_task(dir.path(), "sine", 300);
    let broken = dir.path().join("broken.toml");
    std::fs::write(&broken, "kind = \"vae\"\nlatent_dim = 1\nkl_weight = 2.0\n").unwrap();
    let common = ["--tasks", p(&task), "--skip", "controllability,consistency", "--out"];
    let all_bad = run(&[&["eval", "--models", p(&broken)][..], &common, &[p(&dir.path().join("a"))]].concat());
    assert_eq!(code(&all_bad), 1);
    let fast = fast_model(dir.path(), "ae");
    let partial = run(&[&["eval", "--models", p(&broken), p(&fast)][..], &common, &[p(&dir.path().join("b"))]].concat());
    assert_eq!(code(&partial), 0, "{}", String::from_utf8_lossy(&partial.stderr));
    let csv = std::fs::read_to_string(dir.path().join("b/report.csv")).unwrap();
    assert!(csv.contains("kl_weight"));
}

#[test]
fn replay_reproduces_a_recorded_log_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let task = small_task(dir.path(), "sine", 300);
    let data = dir.path().join("sine.ds");
    let model_path = dir.path().join("cae.lam");
    assert_eq!(code(&run(&["gen-data", "--task", p(&task), "--out", p(&data)])), 0);
    assert_eq!(
        code(&run(&["train", "--model", p(&fast_model(dir.path(), "cae")), "--data", p(&data), "--out", p(&model_path)])),
        0
    );
    let model = Arc::new(TrainedModel::load(&model_path).unwrap());
    let spec = DemoDataset::load(&data).unwrap().spec;
    let config = SessionConfig {
        record: true,
        ..Default::default()
    };
    let mut session = Session::new(model, &spec.geometry, task_start_state(&spec).unwrap(), config).unwrap();
    session.apply(&ClientMessage::Resume);
    for k in 0..200 {
        if k % 10 == 0 {
            session.apply(&ClientMessage::Input {
                z: vec![(k as f64 * 0.1).cos()],
                t: None,
            });
        }
        session.tick();
    }
    let log = session.input_log().unwrap();
    let log_path = dir.path().join("inputs.jsonl");
    std::fs::write(&log_path, log.to_jsonl()).unwrap();
    let states = dir.path().join("states.jsonl");
    let out = run(&["replay", "--log", p(&log_path), "--model", p(&model_path), "--task", p(&task), "--out", p(&states)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("\"matches_recording\":true"));
    assert_eq!(std::fs::read_to_string(&states).unwrap().lines().count(), 200);

    let mut tampered = log.clone();
    tampered.final_state[0] += 1e-12;
    std::fs::write(&log_path, tampered.to_jsonl()).unwrap();
    let out = run(&["replay", "--log", p(&log_path), "--model", p(&model_path), "--task", p(&task)]);
    assert_eq!(code(&out), 1);
}

fn http_get(addr: &str, path: &str) -> String {
    let mut stream = std::net::TcpStream::connect(addr).unwrap();
    write!(stream, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut text = String::new();
    stream.read_to_string(&mut text).unwrap();
    text
}

#[test]
fn serve_lists_tasks_and_shuts_down_on_sigint() {
    let dir = tempfile::tempdir().unwrap();
    let task = small_task(dir.path(), "reach", 100);
    let data = dir.path().join("reach.ds");
    let model = dir.path().join("reach-pca.lam");
    assert_eq!(code(&run(&["gen-data", "--task", p(&task), "--out", p(&data)])), 0);
    assert_eq!(
        code(&run(&["train", "--model", p(&configs().join("models/pca.toml")), "--data", p(&data), "--out", p(&model)])),
        0
    );
    let mut child = latact()
        .args(["serve", "--model", p(&model), "--task", p(&task), "--port", "0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").unwrap().to_string();

    let tasks = http_get(&addr, "/tasks");
    assert!(tasks.starts_with("HTTP/1.1 200"));
    assert!(tasks.contains("\"name\":\"reach\""));
    assert!(http_get(&addr, "/models").contains("\"name\":\"reach-pca\""));

    let busy = run(&["serve", "--model", p(&model), "--task", p(&task), "--port", addr.rsplit(':').next().unwrap()]);
    assert_eq!(code(&busy), 1);

    Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(child.wait().unwrap().success());
}
