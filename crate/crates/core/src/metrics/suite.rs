use std::collections::BTreeMap;

use rayon::prelude::*;

use super::config::{MeasureKind, MetricConfig};
use super::measures::{
    accuracy, consistency_scalability, controllability, disentanglement_angle, reach_quality, sample_goals,
    sample_state_pairs, sample_states, states_along_trajectory,
};
use super::report::{EvalReport, PlotData, ReportRow};
use crate::align::{propose_alignment, set_alignment, TaskAxes, TaskMeasure};
use crate::arm::JointState;
use crate::demo::{generate, DemoDataset, TaskParams, TaskSpec};
use crate::error::Result;
use crate::models::{train, ModelConfig, ModelKind, TrainedModel};

/// Everything shared by all models evaluated on one task.
struct TaskContext<'a> {
    spec: &'a TaskSpec,
    train: DemoDataset,
    test: DemoDataset,
    axes: TaskAxes,
    pairs: Vec<(JointState, JointState)>,
    consistency_states: Vec<JointState>,
    angle_states: Vec<JointState>,
    goals: Vec<[f64; 2]>,
    reach_start: Option<JointState>,
}

/// Metrics of the PCA reference used for normalization.
struct Reference {
    model: TrainedModel,
    test_mse: f64,
    ctrl_error: Option<f64>,
}

impl<'a> TaskContext<'a> {
    fn new(spec: &'a TaskSpec, cfg: &MetricConfig) -> Result<Self> {
        let dataset = generate(spec)?;
        let (train, test) = dataset.split_by_trajectory(cfg.test_fraction, cfg.rng_seed)?;
        let mut axes = TaskAxes::for_task(spec);
        if let Some(kind) = cfg.measure {
            axes.measure = match kind {
                MeasureKind::EePosition => TaskMeasure::EePosition { arm: 0 },
                MeasureKind::EeOrientation => TaskMeasure::EeOrientation,
            };
        }
        let c = &cfg.controllability;
        let pairs = sample_state_pairs(&test, c.pair_count, c.pair_scope, cfg.rng_seed)?;
        let consistency_states = states_along_trajectory(&test, &cfg.consistency)?;
        let angle_states = sample_states(&test, cfg.disentanglement_states, cfg.rng_seed ^ 0xA5A5);
        let (goals, reach_start) = match &spec.task {
            TaskParams::Reach {
                start_state,
                goal_region,
                ..
            } => (
                sample_goals(goal_region, cfg.reach_goals, cfg.rng_seed),
                Some(JointState::new(start_state.clone())?),
            ),
            _ => (Vec::new(), None),
        };
        Ok(TaskContext {
            spec,
            train,
            test,
            axes,
            pairs,
            consistency_states,
            angle_states,
            goals,
            reach_start,
        })
    }

    fn reference(&self, cfg: &MetricConfig) -> Result<Reference> {
        let d = self.spec.latent_dim_intended;
        let mut model = train(&ModelConfig::new(ModelKind::Pca, d), &self.train)?;
        if cfg.auto_align && d <= 2 {
            let q = propose_alignment(&model, &self.train, &self.axes)?;
            set_alignment(&mut model, &q)?;
        }
        let test_mse = model.reconstruction_mse(&self.test)?;
        let ctrl_error = if cfg.enabled.controllability {
            Some(controllability(&model, &self.pairs, &cfg.controllability)?.mean_error)
        } else {
            None
        };
        Ok(Reference {
            model,
            test_mse,
            ctrl_error,
        })
    }
}

fn evaluate(ctx: &TaskContext, reference: &Reference, config: &ModelConfig, seed: u64, cfg: &MetricConfig) -> Result<(ReportRow, PlotData)> {
    let mut config = config.clone();
    config.latent_dim = ctx.spec.latent_dim_intended;
    config.seed = seed;
    let model = if config.kind == ModelKind::Pca {
        reference.model.clone()
    } else {
        let mut m = train(&config, &ctx.train)?;
        if cfg.auto_align && config.latent_dim <= 2 {
            let q = propose_alignment(&m, &ctx.train, &ctx.axes)?;
            set_alignment(&mut m, &q)?;
        }
        m
    };
    let mut row = ReportRow::new(&ctx.spec.name, config.kind, seed, config.latent_dim);
    let mut plot = PlotData {
        task: ctx.spec.name.clone(),
        model: config.kind.name().to_string(),
        seed,
        consistency: Vec::new(),
        reach_paths: Vec::new(),
        reach_goals: Vec::new(),
    };
    row.train_mse = Some(model.final_train_mse);
    row.initial_loss = model.loss_history.first().copied();
    row.final_loss = model.loss_history.last().copied();
    row.alignment = model.alignment().transpose().iter().copied().collect();

    if cfg.enabled.accuracy {
        let acc = accuracy(&model, &ctx.test, reference.test_mse)?;
        row.test_mse = Some(acc.mse);
        row.normalized_mse = acc.percent_of_reference;
    }
    if cfg.enabled.controllability {
        let c = if config.kind == ModelKind::Pca {
            reference.ctrl_error.expect("reference controllability computed")
        } else {
            controllability(&model, &ctx.pairs, &cfg.controllability)?.mean_error
        };
        row.ctrl_error = Some(c);
        row.ctrl_percent = reference
            .ctrl_error
            .filter(|&r| r > 0.0)
            .map(|r| 100.0 * c / r);
    }
    if cfg.enabled.consistency {
        let per_axis = consistency_scalability(&model, &ctx.consistency_states, &ctx.axes, &cfg.consistency)?;
        row.r2_axes = per_axis.iter().map(|a| a.r2).collect();
        let valid: Vec<f64> = row.r2_axes.iter().flatten().copied().collect();
        row.r2 = (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64);
        plot.consistency = per_axis.into_iter().map(|a| a.points).collect();
    }
    if cfg.enabled.disentanglement && config.latent_dim == 2 {
        let arm = match ctx.axes.measure {
            TaskMeasure::EePosition { arm } => arm,
            TaskMeasure::EeOrientation => 0,
        };
        let dis = disentanglement_angle(&model, &ctx.angle_states, arm)?;
        row.angle_mean = Some(dis.mean_deg);
        row.angle_sd = Some(dis.sd_deg);
        row.angle_skipped = dis.skipped;
    }
    if let (true, Some(start)) = (cfg.enabled.reach, &ctx.reach_start) {
        let rq = reach_quality(&model, start, &ctx.goals, &cfg.controllability)?;
        row.reach_distance = Some((rq.distance_mean, rq.distance_sd));
        row.reach_length = Some((rq.length_mean, rq.length_sd));
        plot.reach_paths = rq.paths;
        plot.reach_goals = rq.goals;
    }
    Ok((row, plot))
}

/// Trains every model config with every seed on every task and measures
/// them against the task's PCA reference. Rows are ordered by (task, model,
/// seed); a failing combination yields a row carrying its error message.
///
/// The latent dimension of each model is taken from the task.
pub fn run_suite(models: &[ModelConfig], tasks: &[TaskSpec], seeds: &[u64], cfg: &MetricConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let mut report = EvalReport::default();
    for spec in tasks {
        let ctx = TaskContext::new(spec, cfg)?;
        let reference = ctx.reference(cfg)?;
        let jobs: Vec<(usize, &ModelConfig, u64)> = models
            .iter()
            .enumerate()
            .flat_map(|(i, m)| seeds.iter().map(move |&s| (i, m, s)))
            .collect();
        let results: Vec<(ReportRow, Option<PlotData>)> = jobs
            .par_iter()
            .map(|&(_, config, seed)| match evaluate(&ctx, &reference, config, seed, cfg) {
                Ok((row, plot)) => (row, Some(plot)),
                Err(e) => {
                    let mut row = ReportRow::new(&spec.name, config.kind, seed, spec.latent_dim_intended);
                    row.error = Some(e.to_string());
                    (row, None)
                }
            })
            .collect();
        let mut first_seen = BTreeMap::new();
        for (row, plot) in results {
            if let Some(plot) = plot {
                first_seen.entry(row.model.clone()).or_insert(plot);
            }
            report.rows.push(row);
        }
        report.plots.extend(first_seen.into_values());
    }
    Ok(report)
}
