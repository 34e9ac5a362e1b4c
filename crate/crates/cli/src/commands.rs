use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use latact_core::align::{propose_alignment, set_alignment, AlignmentTransform, TaskAxes};
use latact_core::demo::{generate, DemoDataset};
use latact_core::metrics::run_suite;
use latact_core::models::{train, TrainedModel};
use latact_teleop::{replay, serve, InputLog, Registry, Service, SessionConfig, TaskEntry};

use crate::config::{self, Measure};
use crate::{AlignArgs, Cli, Command, DataFormat, EvalArgs, GenDataArgs, ReplayArgs, ServeArgs, TrainArgs, UsageError};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(args) => gen_data(cli, args),
        Command::Train(args) => train_model(cli, args),
        Command::Align(args) => align(cli, args),
        Command::Eval(args) => eval(cli, args),
        Command::Serve(args) => serve_cmd(args),
        Command::Replay(args) => replay_cmd(cli, args),
    }
}

fn required_out(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| UsageError("this subcommand needs --out".into()).into())
}

fn load_dataset(path: &Path) -> Result<DemoDataset> {
    DemoDataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_model(path: &Path) -> Result<TrainedModel> {
    TrainedModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn gen_data(cli: &Cli, args: &GenDataArgs) -> Result<()> {
    let out = required_out(cli)?;
    let mut spec = config::task(&args.task)?;
    if let Some(seed) = cli.seed {
        spec.rng_seed = seed;
    }
    if let Some(pairs) = args.pairs {
        spec.target_pair_count = pairs;
    }
    let ds = generate(&spec)?;
    let replay_error = ds.replay_error()?;
    match args.format {
        DataFormat::Binary => ds.save(out)?,
        DataFormat::Jsonl => ds.write_jsonl(BufWriter::new(File::create(out)?))?,
    }
    let status = if replay_error <= 1e-9 { "ok" } else { "FAILED" };
    println!(
        "{}: {} pairs in {} trajectories -> {}",
        spec.name,
        ds.len(),
        ds.trajectory_count(),
        out.display()
    );
    println!("self-consistency: max replay error {replay_error:.2e} ({status})");
    if replay_error > 1e-9 {
        bail!("generated dataset does not replay through the simulator");
    }
    Ok(())
}

fn train_model(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let out = required_out(cli)?;
    let mut cfg = config::model(&args.model)?;
    let ds = load_dataset(&args.data)?;
    cfg.latent_dim = args.latent_dim.unwrap_or(ds.spec.latent_dim_intended);
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let (train_set, test_set) = if args.test_fraction > 0.0 {
        let (a, b) = ds.split_by_trajectory(args.test_fraction, 0)?;
        (a, Some(b))
    } else {
        (ds, None)
    };
    let mut model = train(&cfg, &train_set)?;
    if args.align {
        let axes = TaskAxes::for_task(&train_set.spec);
        let q = propose_alignment(&model, &train_set, &axes)?;
        set_alignment(&mut model, &q)?;
        println!("alignment {:?}", q.row_major());
    }
    model.save(out)?;
    println!(
        "{} d={} on {} pairs: train MSE {:.6e}",
        cfg.kind,
        cfg.latent_dim,
        train_set.len(),
        model.final_train_mse
    );
    if let Some(test) = test_set {
        println!("test MSE {:.6e} on {} held-out pairs", model.reconstruction_mse(&test)?, test.len());
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn align(cli: &Cli, args: &AlignArgs) -> Result<()> {
    let mut model = load_model(&args.model)?;
    let d = model.latent_dim();
    let transform = match (&args.matrix, args.auto) {
        (Some(text), false) => {
            let entries = config::matrix(text)?;
            AlignmentTransform::from_row_major(d, &entries).map_err(|e| UsageError(e.to_string()))?
        }
        (None, true) => {
            let data = args
                .data
                .as_deref()
                .ok_or_else(|| UsageError("--auto needs --data".into()))?;
            let ds = load_dataset(data)?;
            let axes = TaskAxes::for_task(&ds.spec);
            let current = AlignmentTransform::new(model.alignment().clone())?;
            let proposal = propose_alignment(&model, &ds, &axes)?;
            current.compose(&proposal)?
        }
        _ => return Err(UsageError("pass exactly one of --matrix or --auto".into()).into()),
    };
    set_alignment(&mut model, &transform)?;
    let out = cli.out.clone().unwrap_or_else(|| args.model.clone());
    model.save(&out)?;
    println!("alignment (row-major) {:?}", transform.row_major());
    println!("wrote {}", out.display());
    Ok(())
}

fn eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let out = required_out(cli)?;
    let models = args.models.iter().map(|p| config::model(p)).collect::<Result<Vec<_>>>()?;
    let tasks = args.tasks.iter().map(|p| config::task(p)).collect::<Result<Vec<_>>>()?;
    let mut metrics = config::metrics(args.metrics.as_deref())?;
    for m in &args.skip {
        let flag = match m {
            Measure::Accuracy => &mut metrics.enabled.accuracy,
            Measure::Controllability => &mut metrics.enabled.controllability,
            Measure::Consistency => &mut metrics.enabled.consistency,
            Measure::Disentanglement => &mut metrics.enabled.disentanglement,
            Measure::Reach => &mut metrics.enabled.reach,
        };
        *flag = false;
    }
    if let Some(pairs) = args.pairs {
        metrics.controllability.pair_count = pairs;
    }
    let seeds = match (&args.seeds, cli.seed) {
        (Some(list), _) => config::seeds(list)?,
        (None, Some(seed)) => vec![seed],
        (None, None) => vec![0],
    };
    log::info!("evaluating {} models x {} tasks x {} seeds", models.len(), tasks.len(), seeds.len());
    let report = run_suite(&models, &tasks, &seeds, &metrics)?;
    let written = report.write_files(out, args.emit_plots)?;
    print!("{}", report.summary_table());
    for row in report.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "failed: {} {} seed {}: {}",
            row.task,
            row.model,
            row.seed,
            row.error.as_deref().unwrap_or_default()
        );
    }
    println!("wrote {} files to {}", written.len(), out.display());
    if !report.rows.is_empty() && report.rows.iter().all(|r| r.error.is_some()) {
        bail!("every evaluation failed");
    }
    Ok(())
}

fn parse_model_arg(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) => (name.to_string(), PathBuf::from(path)),
        None => {
            let path = PathBuf::from(arg);
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| arg.to_string());
            (name, path)
        }
    }
}

fn serve_cmd(args: &ServeArgs) -> Result<()> {
    if !(args.tick_hz >= 0.0 && args.tick_hz.is_finite()) {
        return Err(UsageError("--tick-hz must be >= 0".into()).into());
    }
    let mut registry = Registry::default();
    for arg in &args.models {
        let (name, path) = parse_model_arg(arg);
        registry.models.insert(name, Arc::new(load_model(&path)?));
    }
    for path in &args.tasks {
        let spec = config::task(path)?;
        registry.tasks.insert(spec.name.clone(), TaskEntry::new(spec)?);
    }
    let mut session = SessionConfig {
        tick_hz: args.tick_hz,
        deadzone: args.deadzone,
        record: args.record,
        ..Default::default()
    };
    if args.ood_radius.is_some() {
        session.ood_radius = args.ood_radius;
    }
    let service = Service::new(registry, session);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        };
        serve(listener, service, args.ui_dir.clone(), shutdown).await?;
        Ok(())
    })
}

fn replay_cmd(cli: &Cli, args: &ReplayArgs) -> Result<()> {
    let file = File::open(&args.log).map_err(|e| UsageError(format!("cannot read log {}: {e}", args.log.display())))?;
    let log = InputLog::read_jsonl(BufReader::new(file)).map_err(|e| UsageError(format!("{}: {e}", args.log.display())))?;
    let model = Arc::new(load_model(&args.model)?);
    let spec = config::task(&args.task)?;
    let session = SessionConfig {
        deadzone: args.deadzone,
        ood_radius: None,
        ..Default::default()
    };
    let result = replay(&log, model, &spec.geometry, &session)?;
    if let Some(out) = &cli.out {
        let mut w = BufWriter::new(File::create(out)?);
        for (k, s) in result.states.iter().enumerate() {
            let line = serde_json::json!({ "tick": k + 1, "q": s.angles.as_slice() });
            writeln!(w, "{line}")?;
        }
        w.flush()?;
    }
    let summary: BTreeMap<&str, serde_json::Value> = BTreeMap::from([
        ("ticks", result.states.len().into()),
        ("final_state", result.final_state.angles.as_slice().to_vec().into()),
        ("matches_recording", result.matches.into()),
    ]);
    println!("{}", serde_json::to_string(&summary)?);
    if !result.matches {
        bail!("replayed final state differs from the recorded one");
    }
    Ok(())
}
