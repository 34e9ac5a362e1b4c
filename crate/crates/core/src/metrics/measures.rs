use nalgebra::{DMatrix, Vector2};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ConsistencyConfig, ControllabilityConfig, PairScope};
use crate::align::TaskAxes;
use crate::arm::{ArmGeometry, JointState};
use crate::demo::{DemoDataset, Rect};
use crate::error::{Error, Result};
use crate::models::{LatentDecoder, TrainedModel};

/// Test MSE and its ratio to a reference (PCA) MSE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    pub mse: f64,
    /// `100 * mse / reference`; `None` when the reference is zero.
    pub percent_of_reference: Option<f64>,
}

pub fn accuracy(model: &TrainedModel, test: &DemoDataset, reference_mse: f64) -> Result<Accuracy> {
    let mse = model.reconstruction_mse(test)?;
    Ok(Accuracy {
        mse,
        percent_of_reference: (reference_mse > 0.0).then(|| 100.0 * mse / reference_mse),
    })
}

/// Points along each axis, spanning `[lo, hi]` inclusive.
fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

/// Cartesian grid over the box `center +- half_width`, clipped to [-1, 1].
pub fn latent_grid(center: &[f64], half_width: f64, cells: usize) -> DMatrix<f64> {
    let axes: Vec<Vec<f64>> = center
        .iter()
        .map(|&c| linspace((c - half_width).max(-1.0), (c + half_width).min(1.0), cells))
        .collect();
    let d = center.len();
    let total: usize = axes.iter().map(Vec::len).product();
    let mut grid = DMatrix::zeros(total, d);
    for row in 0..total {
        let mut rest = row;
        for (j, axis) in axes.iter().enumerate().rev() {
            grid[(row, j)] = axis[rest % axis.len()];
            rest /= axis.len();
        }
    }
    grid
}

/// Outcome of driving one start state toward a goal.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyOutcome {
    pub initial_error: f64,
    pub final_error: f64,
    pub steps: usize,
    /// Visited states, starting with the start state.
    pub trace: Vec<JointState>,
    /// The decoder produced a non-finite action and the run was abandoned.
    pub aborted: bool,
}

/// Receding-horizon search: at each step pick the grid latent whose one-step
/// successor minimizes `objective`, refine once around it, and stop after
/// `horizon` steps or as soon as the objective would not decrease.
pub fn greedy_drive<M, F>(model: &M, start: &JointState, objective: F, cfg: &ControllabilityConfig) -> Result<GreedyOutcome>
where
    M: LatentDecoder + ?Sized,
    F: Fn(&JointState) -> Result<f64>,
{
    let geometry = model.geometry();
    let d = model.latent_dim();
    let coarse = latent_grid(&vec![0.0; d], 1.0, cfg.grid_cells);
    let spacing = 2.0 / (cfg.grid_cells - 1) as f64;
    let initial_error = objective(start)?;
    let mut state = start.clone();
    let mut error = initial_error;
    let mut trace = vec![state.clone()];
    let mut steps = 0;

    let best_of = |state: &JointState, grid: &DMatrix<f64>| -> Result<Option<(f64, JointState, usize)>> {
        let actions = model.decode_at(grid, state)?;
        if !actions.iter().all(|v| v.is_finite()) {
            return Ok(None);
        }
        let mut best: Option<(f64, JointState, usize)> = None;
        for (row, action) in actions.row_iter().enumerate() {
            let next = JointState::from_vector(&state.angles + action.transpose() * geometry.dt);
            let e = objective(&next)?;
            if best.as_ref().is_none_or(|(b, _, _)| e < *b) {
                best = Some((e, next, row));
            }
        }
        Ok(best)
    };

    while steps < cfg.horizon && error > 0.0 {
        let Some((mut cand_err, mut cand_state, row)) = best_of(&state, &coarse)? else {
            return Ok(GreedyOutcome {
                initial_error,
                final_error: initial_error,
                steps,
                trace,
                aborted: true,
            });
        };
        if cfg.refine_cells > 1 {
            let center: Vec<f64> = coarse.row(row).iter().copied().collect();
            let fine = latent_grid(&center, spacing, cfg.refine_cells);
            match best_of(&state, &fine)? {
                Some((e, s, _)) if e < cand_err => {
                    cand_err = e;
                    cand_state = s;
                }
                Some(_) => {}
                None => {
                    return Ok(GreedyOutcome {
                        initial_error,
                        final_error: initial_error,
                        steps,
                        trace,
                        aborted: true,
                    })
                }
            }
        }
        if cand_err >= error {
            break;
        }
        error = cand_err;
        state = cand_state;
        trace.push(state.clone());
        steps += 1;
    }
    Ok(GreedyOutcome {
        initial_error,
        final_error: error,
        steps,
        trace,
        aborted: false,
    })
}

/// Start/goal state pairs drawn from a held-out set.
pub fn sample_state_pairs(test: &DemoDataset, count: usize, scope: PairScope, seed: u64) -> Result<Vec<(JointState, JointState)>> {
    if test.is_empty() {
        return Err(Error::Config("no test states to pair".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranges: Vec<_> = test.trajectory_ranges().into_iter().filter(|r| r.len() >= 2).collect();
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let (i, j) = match scope {
            PairScope::SameTrajectory if !ranges.is_empty() => {
                let r = ranges.choose(&mut rng).expect("nonempty").clone();
                let i = rng.random_range(r.clone());
                let mut j = rng.random_range(r.start..r.end - 1);
                if j >= i {
                    j += 1;
                }
                (i, j)
            }
            _ => (rng.random_range(0..test.len()), rng.random_range(0..test.len())),
        };
        pairs.push((test.pairs[i].state.clone(), test.pairs[j].state.clone()));
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Controllability {
    /// Mean final joint-space distance to the goal.
    pub mean_error: f64,
    pub mean_steps: f64,
    pub aborted: usize,
}

pub fn controllability<M: LatentDecoder + ?Sized>(model: &M, pairs: &[(JointState, JointState)], cfg: &ControllabilityConfig) -> Result<Controllability> {
    if pairs.is_empty() {
        return Err(Error::Config("controllability needs at least one pair".into()));
    }
    let mut total = 0.0;
    let mut steps = 0usize;
    let mut aborted = 0;
    for (start, goal) in pairs {
        let outcome = greedy_drive(model, start, |s| Ok(s.distance(goal)), cfg)?;
        total += outcome.final_error;
        steps += outcome.steps;
        aborted += outcome.aborted as usize;
    }
    Ok(Controllability {
        mean_error: total / pairs.len() as f64,
        mean_steps: steps as f64 / pairs.len() as f64,
        aborted,
    })
}

/// Ordinary least-squares fit of `y = a + b x` and its R^2 (clamped to >= 0).
/// Returns `None` when `y` has no variance.
pub fn r_squared(points: &[(f64, f64)]) -> Option<f64> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if syy <= f64::MIN_POSITIVE || sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    Some((1.0 - ss_res / syy).max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxisConsistency {
    /// `None` flags degenerate (zero-variance) displacements.
    pub r2: Option<f64>,
    /// `(z, signed displacement)` samples.
    pub points: Vec<(f64, f64)>,
}

/// Evenly spaced states along held-out trajectory `cfg.trajectory_index`.
pub fn states_along_trajectory(test: &DemoDataset, cfg: &ConsistencyConfig) -> Result<Vec<JointState>> {
    if test.trajectory_count() == 0 {
        return Err(Error::Config("no held-out trajectory".into()));
    }
    let traj = test.trajectory(cfg.trajectory_index % test.trajectory_count());
    let count = cfg.state_count;
    Ok((0..count)
        .map(|k| {
            let idx = if count == 1 { 0 } else { k * (traj.len() - 1) / (count - 1) };
            traj[idx].state.clone()
        })
        .collect())
}

/// For each latent axis (others held at 0): decode every grid value at every
/// state, step once, and fit the signed displacement against z.
pub fn consistency_scalability<M: LatentDecoder + ?Sized>(model: &M, states: &[JointState], axes: &TaskAxes, cfg: &ConsistencyConfig) -> Result<Vec<AxisConsistency>> {
    let d = model.latent_dim();
    if axes.axes.len() < d {
        return Err(Error::dim("canonical axes", d, axes.axes.len()));
    }
    let geometry = model.geometry();
    let values = linspace(cfg.z_range[0], cfg.z_range[1], cfg.z_points);
    let mut out = Vec::with_capacity(d);
    for axis in 0..d {
        let grid = DMatrix::from_fn(values.len(), d, |i, j| if j == axis { values[i] } else { 0.0 });
        let mut points = Vec::with_capacity(values.len() * states.len());
        for state in states {
            let actions = model.decode_at(&grid, state)?;
            for (i, action) in actions.row_iter().enumerate() {
                let next = JointState::from_vector(&state.angles + action.transpose() * geometry.dt);
                let delta = axes.measure.displacement(geometry, state, &next)?;
                let progress = axes.signed_progress(axis, geometry, state, &delta)?;
                let signed = if delta.len() == 1 {
                    progress
                } else {
                    delta.norm() * sign(progress)
                };
                points.push((values[i], signed));
            }
        }
        out.push(AxisConsistency {
            r2: r_squared(&points),
            points,
        });
    }
    Ok(out)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Disentanglement {
    pub mean_deg: f64,
    pub sd_deg: f64,
    pub angles: Vec<f64>,
    /// States where an axis produced no end-effector motion.
    pub skipped: usize,
}

/// Angle between the undirected end-effector motion lines produced by the
/// unit latents `(1, 0)` and `(0, 1)` over one step, per state.
pub fn disentanglement_angle<M: LatentDecoder + ?Sized>(model: &M, states: &[JointState], arm: usize) -> Result<Disentanglement> {
    if model.latent_dim() != 2 {
        return Err(Error::dim("latent dimension for disentanglement", 2, model.latent_dim()));
    }
    let geometry = model.geometry();
    let grid = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let mut angles = Vec::with_capacity(states.len());
    let mut skipped = 0;
    for state in states {
        let actions = model.decode_at(&grid, state)?;
        let start = geometry.forward_kinematics(state, arm)?.position;
        let motion = |row: usize| -> Result<Vector2<f64>> {
            let next = JointState::from_vector(&state.angles + actions.row(row).transpose() * geometry.dt);
            Ok(geometry.forward_kinematics(&next, arm)?.position - start)
        };
        let (m1, m2) = (motion(0)?, motion(1)?);
        let (n1, n2) = (m1.norm(), m2.norm());
        if n1 == 0.0 || n2 == 0.0 || !(n1.is_finite() && n2.is_finite()) {
            skipped += 1;
            continue;
        }
        let cos = (m1.dot(&m2) / (n1 * n2)).abs().min(1.0);
        angles.push(cos.acos().to_degrees());
    }
    let (mean_deg, sd_deg) = mean_sd(&angles);
    Ok(Disentanglement {
        mean_deg,
        sd_deg,
        angles,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachQuality {
    pub distance_mean: f64,
    pub distance_sd: f64,
    pub length_mean: f64,
    pub length_sd: f64,
    pub aborted: usize,
    /// End-effector path per goal.
    pub paths: Vec<Vec<[f64; 2]>>,
    pub goals: Vec<[f64; 2]>,
}

/// Goals drawn uniformly from `region`.
pub fn sample_goals(region: &Rect, count: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            [
                rng.random_range(region.min[0]..=region.max[0]),
                rng.random_range(region.min[1]..=region.max[1]),
            ]
        })
        .collect()
}

/// Drives the end-effector from `start` toward each goal with the greedy
/// solver; reports final distances and path arc lengths.
pub fn reach_quality<M: LatentDecoder + ?Sized>(model: &M, start: &JointState, goals: &[[f64; 2]], cfg: &ControllabilityConfig) -> Result<ReachQuality> {
    let geometry: &ArmGeometry = model.geometry();
    let mut distances = Vec::with_capacity(goals.len());
    let mut lengths = Vec::with_capacity(goals.len());
    let mut paths = Vec::with_capacity(goals.len());
    let mut aborted = 0;
    for goal in goals {
        let g = Vector2::new(goal[0], goal[1]);
        let outcome = greedy_drive(
            model,
            start,
            |s| Ok((geometry.forward_kinematics(s, 0)?.position - g).norm()),
            cfg,
        )?;
        aborted += outcome.aborted as usize;
        let path: Vec<Vector2<f64>> = outcome
            .trace
            .iter()
            .map(|s| geometry.forward_kinematics(s, 0).map(|p| p.position))
            .collect::<Result<_>>()?;
        lengths.push(path.windows(2).map(|w| (w[1] - w[0]).norm()).sum());
        distances.push(outcome.final_error);
        paths.push(path.iter().map(|p| [p.x, p.y]).collect());
    }
    let (distance_mean, distance_sd) = mean_sd(&distances);
    let (length_mean, length_sd) = mean_sd(&lengths);
    Ok(ReachQuality {
        distance_mean,
        distance_sd,
        length_mean,
        length_sd,
        aborted,
        paths,
        goals: goals.to_vec(),
    })
}

/// Mean and population standard deviation; zeros for an empty slice.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Random held-out states, deterministic in `seed`.
pub fn sample_states(test: &DemoDataset, count: usize, seed: u64) -> Vec<JointState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| test.pairs[rng.random_range(0..test.len())].state.clone())
        .collect()
}
