use std::f64::consts::PI;

use nalgebra::{DVector, Rotation2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::controller::{solve_ik, solve_ik_near, track_all};
use super::dataset::{DemoDataset, DemoPair};
use super::task::{TaskParams, TaskSpec};
use crate::arm::{wrap_angle, ArmGeometry, JointState, JointVelocityAction};
use crate::error::{Error, Result};

const IK_TOL: f64 = 1e-10;
const IK_MAX_ITERS: usize = 3000;
const IK_RETRIES: usize = 20;
const WAYPOINT_TOL: f64 = 1e-12;
const WAYPOINT_MAX_ITERS: usize = 200;

/// One trajectory's reference: end-effector targets per arm for waypoints
/// `0..=len`, plus an explicit start state when the task fixes one.
struct Reference {
    waypoints: Vec<Vec<Vector2<f64>>>,
    start_state: Option<JointState>,
}

/// Deterministic per-trajectory generator stream.
pub(crate) fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn signed<R: Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    let mag = if range[1] > range[0] {
        rng.random_range(range[0]..=range[1])
    } else {
        range[0]
    };
    if rng.random_bool(0.5) {
        mag
    } else {
        -mag
    }
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Minimum-jerk time scaling on `[0, 1]`.
fn reference<R: Rng>(spec: &TaskSpec, rng: &mut R) -> Result<Reference> {
    let len = spec.trajectory_length;
    let dt = spec.geometry.dt;
    let horizon = len as f64 * dt;
    match &spec.task {
        TaskParams::Sine {
            amplitude,
            wavelength,
            x_span,
            speed_range,
        } => {
            let v = signed(rng, *speed_range);
            let travel = v * horizon;
            let lo = x_span[0] + (-travel).max(0.0);
            let hi = x_span[1] - travel.max(0.0);
            let x0 = uniform(rng, lo, hi);
            let waypoints = (0..=len)
                .map(|t| {
                    let x = x0 + v * t as f64 * dt;
                    vec![Vector2::new(x, sine_y(*amplitude, *wavelength, x))]
                })
                .collect();
            Ok(Reference {
                waypoints,
                start_state: None,
            })
        }
        TaskParams::Rotate {
            pivot_region,
            box_width,
            pivot_offset,
            angle_range,
            angular_speed_range,
        } => {
            let pivot = Vector2::new(
                uniform(rng, pivot_region.min[0], pivot_region.max[0]),
                uniform(rng, pivot_region.min[1], pivot_region.max[1]),
            );
            let omega = signed(rng, *angular_speed_range);
            let travel = omega * horizon;
            let lo = angle_range[0] + (-travel).max(0.0);
            let hi = angle_range[1] - travel.max(0.0);
            let theta0 = if lo <= hi {
                uniform(rng, lo, hi)
            } else {
                0.5 * (angle_range[0] + angle_range[1] - travel)
            };
            let offset = Vector2::new(pivot_offset[0], pivot_offset[1]);
            let waypoints = (0..=len)
                .map(|t| {
                    let theta = theta0 + omega * t as f64 * dt;
                    let (left, right) = box_grasps(pivot, offset, theta, *box_width);
                    vec![left, right]
                })
                .collect();
            Ok(Reference {
                waypoints,
                start_state: None,
            })
        }
        TaskParams::Circle {
            center,
            radius_range,
            angle_range,
            tangential_speed,
            radial_speed,
        } => {
            let v_tan = uniform(rng, -tangential_speed, *tangential_speed);
            let v_rad = uniform(rng, -radial_speed, *radial_speed);
            let radial_travel = v_rad * horizon;
            let r0 = uniform(
                rng,
                radius_range[0] + (-radial_travel).max(0.0),
                radius_range[1] - radial_travel.max(0.0),
            );
            // radius along the path is linear, so the swept angle has a closed form
            let swept = if v_rad.abs() > 1e-12 {
                v_tan / v_rad * ((r0 + radial_travel) / r0).ln()
            } else {
                v_tan * horizon / r0
            };
            let phi0 = uniform(
                rng,
                angle_range[0] + (-swept).max(0.0),
                angle_range[1] - swept.max(0.0),
            );
            let c = Vector2::new(center[0], center[1]);
            let waypoints = (0..=len)
                .map(|t| {
                    let time = t as f64 * dt;
                    let r = r0 + v_rad * time;
                    let phi = if v_rad.abs() > 1e-12 {
                        phi0 + v_tan / v_rad * (r / r0).ln()
                    } else {
                        phi0 + v_tan * time / r0
                    };
                    vec![c + r * Vector2::new(phi.cos(), phi.sin())]
                })
                .collect();
            Ok(Reference {
                waypoints,
                start_state: None,
            })
        }
        TaskParams::Reach {
            start_state,
            goal_region,
            goal_margin,
            path_bow,
            timing,
        } => {
            let start = JointState::new(start_state.clone())?;
            let from = spec.geometry.forward_kinematics(&start, 0)?.position;
            let style: f64 = rng.random_range(0.0..=1.0);
            let goal = Vector2::new(
                goal_region.min[0] + goal_margin + style * (goal_region.width() - 2.0 * goal_margin),
                uniform(
                    rng,
                    goal_region.min[1] + goal_margin,
                    goal_region.max[1] - goal_margin,
                ),
            );
            let chord = goal - from;
            let normal = Vector2::new(-chord.y, chord.x) / chord.norm().max(1e-12);
            let bow = path_bow * (2.0 * style - 1.0);
            let waypoints = (0..=len)
                .map(|t| {
                    let s = timing.progress(t as f64 / len as f64);
                    vec![from + chord * s + normal * (bow * (PI * s).sin())]
                })
                .collect();
            Ok(Reference {
                waypoints,
                start_state: Some(start),
            })
        }
    }
}

pub fn sine_y(amplitude: f64, wavelength: f64, x: f64) -> f64 {
    amplitude * (2.0 * PI * x / wavelength).sin()
}

/// Left and right grasp points of a box whose pivot sits at `offset` in the box frame.
pub fn box_grasps(pivot: Vector2<f64>, offset: Vector2<f64>, theta: f64, width: f64) -> (Vector2<f64>, Vector2<f64>) {
    let rot = Rotation2::new(theta);
    let center = pivot - rot * offset;
    let half = rot * Vector2::new(0.5 * width, 0.0);
    (center - half, center + half)
}

fn check_reachable(geometry: &ArmGeometry, waypoints: &[Vec<Vector2<f64>>]) -> Result<()> {
    let reach = geometry.reach();
    for (index, targets) in waypoints.iter().enumerate() {
        for (arm, p) in targets.iter().enumerate() {
            let distance = (p - geometry.base(arm)).norm();
            if distance > reach {
                return Err(Error::Unreachable {
                    index,
                    point: [p.x, p.y],
                    distance,
                    reach,
                });
            }
        }
    }
    Ok(())
}

fn generate_trajectory(spec: &TaskSpec, index: usize) -> Result<Vec<DemoPair>> {
    let geometry = &spec.geometry;
    let mut rng = trajectory_rng(spec.rng_seed, index);
    let reference = reference(spec, &mut rng)?;
    check_reachable(geometry, &reference.waypoints)?;

    let mut state = match reference.start_state {
        Some(s) => s,
        None => {
            let noise = Normal::new(0.0, spec.posture_noise.max(0.0))
                .map_err(|e| Error::Config(e.to_string()))?;
            let home = DVector::from_vec(spec.home_posture.clone());
            let mut solved = None;
            for _ in 0..IK_RETRIES {
                let guess = home.map(|h| h + noise.sample(&mut rng));
                let guess = JointState::from_vector(guess);
                if let Some(s) = solve_ik_near(
                    geometry,
                    &guess,
                    &reference.waypoints[0],
                    spec.controller.damping,
                    IK_TOL,
                    IK_MAX_ITERS,
                )? {
                    // FK is 2pi-periodic per joint; keep the start posture compact
                    solved = Some(JointState::from_vector(s.angles.map(wrap_angle)));
                    break;
                }
            }
            solved.ok_or_else(|| {
                let p = reference.waypoints[0][0];
                Error::Unreachable {
                    index: 0,
                    point: [p.x, p.y],
                    distance: (p - geometry.base(0)).norm(),
                    reach: geometry.reach(),
                }
            })?
        }
    };

    let mut pairs = Vec::with_capacity(spec.trajectory_length);
    for targets in reference.waypoints.iter().skip(1) {
        let action = demo_action(spec, &state, targets)?;
        let next = geometry.step(&state, &action)?;
        pairs.push(DemoPair { state, action });
        state = next;
    }
    Ok(pairs)
}

/// Joint velocity that carries `state` onto `targets` within one period.
fn demo_action(spec: &TaskSpec, state: &JointState, targets: &[Vector2<f64>]) -> Result<JointVelocityAction> {
    let geometry = &spec.geometry;
    if spec.controller.refine {
        if let Some(next) = solve_ik(
            geometry,
            state,
            targets,
            spec.controller.damping,
            WAYPOINT_TOL,
            WAYPOINT_MAX_ITERS,
        )? {
            let velocities = (next.angles - &state.angles) / geometry.dt;
            return Ok(JointVelocityAction::from_vector(velocities));
        }
    }
    track_all(geometry, state, targets, &spec.controller)
}

/// Synthesizes the demonstration dataset for `spec`.
///
/// Trajectories are generated independently (in parallel) from per-index
/// random streams and concatenated in index order, so the result depends
/// only on the spec.
pub fn generate(spec: &TaskSpec) -> Result<DemoDataset> {
    spec.validate()?;
    let count = spec.trajectory_count();
    let trajectories: Vec<Vec<DemoPair>> = (0..count)
        .into_par_iter()
        .map(|i| generate_trajectory(spec, i))
        .collect::<Result<_>>()?;

    let mut pairs = Vec::with_capacity(spec.target_pair_count);
    let mut starts = Vec::with_capacity(count);
    for traj in trajectories {
        let remaining = spec.target_pair_count - pairs.len();
        if remaining == 0 {
            break;
        }
        starts.push(pairs.len());
        pairs.extend(traj.into_iter().take(remaining));
    }
    DemoDataset::new(spec.clone(), pairs, starts)
}
