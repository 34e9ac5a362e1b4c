use latact_core::align::{CanonicalAxis, TaskAxes, TaskMeasure};
use latact_core::arm::{ArmGeometry, JointState};
use latact_core::demo::{generate, TaskKind, TaskSpec};
use latact_core::metrics::{
    consistency_scalability, controllability, disentanglement_angle, greedy_drive, reach_quality, run_suite,
    ConsistencyConfig, ControllabilityConfig, MetricConfig, MetricToggles,
};
use latact_core::models::{LatentDecoder, ModelConfig, ModelKind};
use latact_core::tensor::Matrix;
use latact_core::Result;
use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Joint velocity that moves arm 0's end-effector with planar velocity `v`,
/// computed by an explicit damped-free pseudoinverse J^T (J J^T)^-1.
fn pseudoinverse_action(geometry: &ArmGeometry, s: &JointState, v: Vector2<f64>) -> DVector<f64> {
    let j = geometry.jacobian(s, 0).unwrap();
    let jjt = &j * j.transpose();
    let inv = jjt.try_inverse().expect("non-singular test posture");
    j.transpose() * (inv * v)
}

/// z in R^2 maps to end-effector velocity `gain * z`.
struct PlanarDecoder {
    geometry: ArmGeometry,
    gain: f64,
}

impl LatentDecoder for PlanarDecoder {
    fn geometry(&self) -> &ArmGeometry {
        &self.geometry
    }
    fn latent_dim(&self) -> usize {
        2
    }
    fn decode_at(&self, zs: &Matrix, s: &JointState) -> Result<Matrix> {
        let mut out = DMatrix::zeros(zs.nrows(), self.geometry.dof());
        for r in 0..zs.nrows() {
            let v = Vector2::new(zs[(r, 0)], zs[(r, 1)]) * self.gain;
            out.set_row(r, &pseudoinverse_action(&self.geometry, s, v).transpose());
        }
        Ok(out)
    }
}

/// z in R^1 maps to end-effector velocity `gain * z * direction`.
struct AxisDecoder {
    geometry: ArmGeometry,
    direction: Vector2<f64>,
    gain: f64,
}

impl LatentDecoder for AxisDecoder {
    fn geometry(&self) -> &ArmGeometry {
        &self.geometry
    }
    fn latent_dim(&self) -> usize {
        1
    }
    fn decode_at(&self, zs: &Matrix, s: &JointState) -> Result<Matrix> {
        let mut out = DMatrix::zeros(zs.nrows(), self.geometry.dof());
        for r in 0..zs.nrows() {
            let v = self.direction * (zs[(r, 0)] * self.gain);
            out.set_row(r, &pseudoinverse_action(&self.geometry, s, v).transpose());
        }
        Ok(out)
    }
}

/// Ignores z entirely and always returns the zero action.
struct Frozen(ArmGeometry);

impl LatentDecoder for Frozen {
    fn geometry(&self) -> &ArmGeometry {
        &self.0
    }
    fn latent_dim(&self) -> usize {
        1
    }
    fn decode_at(&self, zs: &Matrix, _s: &JointState) -> Result<Matrix> {
        Ok(DMatrix::zeros(zs.nrows(), self.0.dof()))
    }
}

fn arm() -> ArmGeometry {
    ArmGeometry::single(5, 1.0)
}

fn random_bent_states(count: usize, seed: u64) -> Vec<JointState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut q: Vec<f64> = (0..5).map(|_| rng.random_range(0.2..0.6)).collect();
            q[0] = rng.random_range(-1.0..1.0);
            JointState::new(q).unwrap()
        })
        .collect()
}

fn small_spec(kind: TaskKind, pairs: usize) -> TaskSpec {
    let mut spec = TaskSpec::preset(kind);
    spec.target_pair_count = pairs;
    spec
}

#[test]
fn linear_end_effector_decoder_has_unit_r_squared() {
    let decoder = AxisDecoder {
        geometry: arm(),
        direction: Vector2::new(1.0, 0.0),
        gain: 1e-3,
    };
    let axes = TaskAxes {
        measure: TaskMeasure::EePosition { arm: 0 },
        axes: vec![CanonicalAxis::Fixed { direction: [1.0, 0.0] }],
    };
    let states = random_bent_states(25, 1);
    let result = consistency_scalability(&decoder, &states, &axes, &ConsistencyConfig::default()).unwrap();
    let r2 = result[0].r2.unwrap();
    assert!(r2 > 1.0 - 1e-9, "R^2 = {r2}");
    assert_eq!(result[0].points.len(), 25 * 21);
}

#[test]
fn decoder_without_effect_is_flagged_degenerate() {
    let axes = TaskAxes {
        measure: TaskMeasure::EePosition { arm: 0 },
        axes: vec![CanonicalAxis::Fixed { direction: [1.0, 0.0] }],
    };
    let states = random_bent_states(5, 2);
    let result = consistency_scalability(&Frozen(arm()), &states, &axes, &ConsistencyConfig::default()).unwrap();
    assert_eq!(result[0].r2, None);
}

#[test]
fn pseudoinverse_decoder_axes_are_perpendicular() {
    let decoder = PlanarDecoder {
        geometry: arm(),
        gain: 0.05,
    };
    let states = random_bent_states(50, 3);
    let dis = disentanglement_angle(&decoder, &states, 0).unwrap();
    assert_eq!(dis.skipped, 0);
    assert!((dis.mean_deg - 90.0).abs() < 1.0, "mean angle {}", dis.mean_deg);
}

#[test]
fn identical_start_and_goal_needs_no_steps() {
    let decoder = PlanarDecoder {
        geometry: arm(),
        gain: 0.5,
    };
    let states = random_bent_states(5, 4);
    let pairs: Vec<_> = states.iter().map(|s| (s.clone(), s.clone())).collect();
    let c = controllability(&decoder, &pairs, &ControllabilityConfig::default()).unwrap();
    assert_eq!(c.mean_error, 0.0);
    assert_eq!(c.mean_steps, 0.0);
}

#[test]
fn greedy_never_increases_the_objective() {
    let decoder = PlanarDecoder {
        geometry: arm(),
        gain: 0.5,
    };
    let states = random_bent_states(6, 5);
    for w in states.windows(2) {
        let goal = w[1].clone();
        let out = greedy_drive(&decoder, &w[0], |s| Ok(s.distance(&goal)), &ControllabilityConfig::default()).unwrap();
        assert!(out.final_error <= out.initial_error);
        let errors: Vec<f64> = out.trace.iter().map(|s| s.distance(&goal)).collect();
        assert!(errors.windows(2).all(|e| e[1] < e[0]));
        assert_eq!(out.trace.len(), out.steps + 1);
    }
}

#[test]
fn finer_grid_never_loses_on_a_single_step() {
    let decoder = PlanarDecoder {
        geometry: arm(),
        gain: 0.8,
    };
    let states = random_bent_states(40, 6);
    let coarse = ControllabilityConfig {
        horizon: 1,
        grid_cells: 21,
        refine_cells: 1,
        ..Default::default()
    };
    // 41 points over [-1, 1] contain every point of the 21-point grid
    let fine = ControllabilityConfig {
        grid_cells: 41,
        ..coarse.clone()
    };
    let pairs: Vec<_> = states.chunks(2).map(|p| (p[0].clone(), p[1].clone())).collect();
    let e_coarse = controllability(&decoder, &pairs, &coarse).unwrap().mean_error;
    let e_fine = controllability(&decoder, &pairs, &fine).unwrap().mean_error;
    assert!(e_fine <= e_coarse, "fine {e_fine} > coarse {e_coarse}");
}

#[test]
fn reaching_a_goal_at_the_start_is_free() {
    let decoder = PlanarDecoder {
        geometry: arm(),
        gain: 0.5,
    };
    let start = random_bent_states(1, 7).remove(0);
    let p = decoder.geometry.forward_kinematics(&start, 0).unwrap().position;
    let rq = reach_quality(&decoder, &start, &[[p.x, p.y]], &ControllabilityConfig::default()).unwrap();
    assert!(rq.distance_mean < 1e-12);
    assert_eq!(rq.length_mean, 0.0);
}

#[test]
fn reach_paths_respect_the_triangle_inequality() {
    let decoder = PlanarDecoder {
        geometry: arm(),
        gain: 0.5,
    };
    let start = random_bent_states(1, 8).remove(0);
    let p = decoder.geometry.forward_kinematics(&start, 0).unwrap().position;
    let goals: Vec<[f64; 2]> = (0..8)
        .map(|k| {
            let a = k as f64 * 0.8;
            [p.x + 0.6 * a.cos(), p.y + 0.6 * a.sin()]
        })
        .collect();
    let rq = reach_quality(&decoder, &start, &goals, &ControllabilityConfig::default()).unwrap();
    for (path, goal) in rq.paths.iter().zip(&goals) {
        let length: f64 = path
            .windows(2)
            .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
            .sum();
        let last = path.last().unwrap();
        let final_dist = ((last[0] - goal[0]).powi(2) + (last[1] - goal[1]).powi(2)).sqrt();
        let initial = ((p.x - goal[0]).powi(2) + (p.y - goal[1]).powi(2)).sqrt();
        assert!(length + final_dist >= initial - 1e-12);
        assert!(final_dist < 0.05, "planar decoder should reach {goal:?}: {final_dist}");
    }
}

fn quick_metrics() -> MetricConfig {
    let mut cfg = MetricConfig::default();
    cfg.controllability.pair_count = 20;
    cfg.controllability.horizon = 20;
    cfg.disentanglement_states = 10;
    cfg.reach_goals = 5;
    cfg
}

#[test]
fn pca_only_suite_is_its_own_reference() {
    let report = run_suite(
        &[ModelConfig::new(ModelKind::Pca, 1)],
        &[small_spec(TaskKind::Sine, 600)],
        &[0, 1],
        &quick_metrics(),
    )
    .unwrap();
    assert_eq!(report.rows.len(), 2);
    for row in &report.rows {
        assert_eq!(row.error, None);
        assert!((row.normalized_mse.unwrap() - 100.0).abs() < 1e-9);
        assert!((row.ctrl_percent.unwrap() - 100.0).abs() < 1e-9);
    }
    let summary = report.summary();
    assert_eq!(summary[0].normalized_mse.unwrap().1, 0.0);
}

#[test]
fn suite_reruns_are_identical_and_single_seed_has_zero_spread() {
    let mut ae = ModelConfig::new(ModelKind::Ae, 1);
    ae.epochs = 3;
    ae.hidden_sizes = vec![8];
    let models = [ModelConfig::new(ModelKind::Pca, 1), ae];
    let tasks = [small_spec(TaskKind::Sine, 400)];
    let cfg = MetricConfig {
        enabled: MetricToggles {
            reach: false,
            ..Default::default()
        },
        ..quick_metrics()
    };
    let a = run_suite(&models, &tasks, &[5], &cfg).unwrap();
    let b = run_suite(&models, &tasks, &[5], &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
    for s in a.summary() {
        assert_eq!(s.seeds, 1);
        for stat in [s.normalized_mse, s.ctrl_percent, s.r2].into_iter().flatten() {
            assert_eq!(stat.1, 0.0);
        }
    }
}

#[test]
fn suite_reports_reach_and_angles_where_the_task_has_them() {
    let cfg = quick_metrics();
    let report = run_suite(
        &[ModelConfig::new(ModelKind::Pca, 1)],
        &[small_spec(TaskKind::Circle, 400), small_spec(TaskKind::Reach, 400)],
        &[0],
        &MetricConfig {
            enabled: MetricToggles {
                controllability: false,
                ..Default::default()
            },
            ..cfg
        },
    )
    .unwrap();
    let circle = &report.rows[0];
    assert_eq!(circle.latent_dim, 2);
    assert!(circle.angle_mean.is_some() && circle.reach_distance.is_none());
    assert_eq!(circle.r2_axes.len(), 2);
    let reach = &report.rows[1];
    assert!(reach.angle_mean.is_none());
    let (dist, _) = reach.reach_distance.unwrap();
    let (len, _) = reach.reach_length.unwrap();
    assert!(dist >= 0.0 && len >= 0.0);
    for row in &report.rows {
        for r2 in row.r2_axes.iter().flatten() {
            assert!((0.0..=1.0).contains(r2));
        }
    }
}

#[test]
fn suite_plots_and_files_are_written() {
    let report = run_suite(
        &[ModelConfig::new(ModelKind::Pca, 1)],
        &[small_spec(TaskKind::Reach, 300)],
        &[0],
        &quick_metrics(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = report.write_files(dir.path(), true).unwrap();
    let names: Vec<String> = written
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    for expected in ["report.csv", "summary.txt", "report.json", "reach_PCA_consistency_z1.svg", "reach_PCA_reach_paths.svg"] {
        assert!(names.iter().any(|n| n == expected), "missing {expected} in {names:?}");
    }
}

#[test]
fn dataset_used_by_suite_is_the_generated_one() {
    // the suite regenerates from the spec; the same spec must give the same data
    let spec = small_spec(TaskKind::Rotate, 300);
    let a = generate(&spec).unwrap();
    let b = generate(&spec).unwrap();
    assert_eq!(a.pairs, b.pairs);
}
