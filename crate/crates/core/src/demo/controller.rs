use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use super::task::ControllerParams;
use crate::arm::{ArmGeometry, JointState, JointVelocityAction};
use crate::error::{Error, Result};

/// Resolved-rate action that moves one arm's end-effector toward `target`:
/// `a = J^T (J J^T + damping^2 I)^-1 * gain * (target - ee) / dt`.
///
/// Joints of other arms receive zero velocity. Singular configurations are
/// absorbed by the damping term.
pub fn tracking_controller(
    geometry: &ArmGeometry,
    state: &JointState,
    ee_target: Vector2<f64>,
    arm_index: usize,
    params: &ControllerParams,
) -> Result<JointVelocityAction> {
    if !(ee_target.x.is_finite() && ee_target.y.is_finite()) {
        return Err(Error::NonFinite("tracking target"));
    }
    let ee = geometry.forward_kinematics(state, arm_index)?.position;
    let jac = geometry.jacobian(state, arm_index)?;
    let desired = (ee_target - ee) * (params.gain / geometry.dt);
    let damped = &jac * jac.transpose() + Matrix2::identity() * params.damping.powi(2);
    // damping > 0 keeps this invertible; fall back to zero motion otherwise
    let solved = damped.try_inverse().map(|inv| inv * desired).unwrap_or_else(Vector2::zeros);
    let arm_vel = jac.transpose() * solved;
    let mut full = DVector::zeros(geometry.dof());
    let offset = arm_index * geometry.joints_per_arm;
    full.rows_mut(offset, geometry.joints_per_arm).copy_from(&arm_vel);
    Ok(JointVelocityAction::from_vector(full))
}

/// Sums per-arm tracking actions so every arm follows its own target.
pub fn track_all(
    geometry: &ArmGeometry,
    state: &JointState,
    targets: &[Vector2<f64>],
    params: &ControllerParams,
) -> Result<JointVelocityAction> {
    if targets.len() != geometry.arm_count {
        return Err(Error::dim("tracking targets", geometry.arm_count, targets.len()));
    }
    let mut total = DVector::zeros(geometry.dof());
    for (arm, target) in targets.iter().enumerate() {
        total += tracking_controller(geometry, state, *target, arm, params)?.velocities;
    }
    Ok(JointVelocityAction::from_vector(total))
}

/// Iterates full-gain tracking until every end-effector sits on its target.
/// Returns `None` if the residual stays above `tol`.
pub fn solve_ik(
    geometry: &ArmGeometry,
    start: &JointState,
    targets: &[Vector2<f64>],
    damping: f64,
    tol: f64,
    max_iters: usize,
) -> Result<Option<JointState>> {
    let params = ControllerParams {
        damping,
        gain: 1.0,
        refine: false,
    };
    let mut state = start.clone();
    for _ in 0..max_iters {
        let err = max_error(geometry, &state, targets)?;
        if err < tol {
            return Ok(Some(state));
        }
        let action = track_all(geometry, &state, targets, &params)?;
        state = geometry.step(&state, &action)?;
    }
    let err = max_error(geometry, &state, targets)?;
    Ok((err < tol).then_some(state))
}

const MAX_IK_TASK_STEP: f64 = 0.2;

/// Like [`solve_ik`], but each iteration also moves the arms' null space
/// toward `posture`, so the solution stays close to it.
pub fn solve_ik_near(
    geometry: &ArmGeometry,
    posture: &JointState,
    targets: &[Vector2<f64>],
    damping: f64,
    tol: f64,
    max_iters: usize,
) -> Result<Option<JointState>> {
    if targets.len() != geometry.arm_count {
        return Err(Error::dim("tracking targets", geometry.arm_count, targets.len()));
    }
    if posture.len() != geometry.dof() {
        return Err(Error::dim("reference posture", geometry.dof(), posture.len()));
    }
    let k = geometry.joints_per_arm;
    let mut q = posture.angles.clone();
    for _ in 0..max_iters {
        let state = JointState::from_vector(q.clone());
        let positions = geometry.ee_positions(&state)?;
        let err = positions
            .iter()
            .zip(targets)
            .map(|(p, t)| (p - t).norm())
            .fold(0.0, f64::max);
        let mut delta = DVector::zeros(geometry.dof());
        for (arm, target) in targets.iter().enumerate() {
            let jac = geometry.jacobian(&state, arm)?;
            let damped = &jac * jac.transpose() + Matrix2::identity() * damping.powi(2);
            let Some(inv) = damped.try_inverse() else {
                continue;
            };
            let pinv = jac.transpose() * inv;
            let null = DMatrix::identity(k, k) - &pinv * &jac;
            let pull = (posture.angles.rows(arm * k, k) - q.rows(arm * k, k)) * 0.5;
            // large task-space jumps can swing the arm onto a folded branch
            let mut task_err = target - positions[arm];
            let len = task_err.norm();
            if len > MAX_IK_TASK_STEP {
                task_err *= MAX_IK_TASK_STEP / len;
            }
            let step = &pinv * task_err + null * pull;
            delta.rows_mut(arm * k, k).copy_from(&step);
        }
        if err < tol && delta.norm() < tol {
            break;
        }
        q += delta;
    }
    // the null-space pull stops short of exact convergence; finish with plain tracking
    solve_ik(geometry, &JointState::from_vector(q), targets, damping, tol, max_iters)
}

fn max_error(geometry: &ArmGeometry, state: &JointState, targets: &[Vector2<f64>]) -> Result<f64> {
    let positions = geometry.ee_positions(state)?;
    Ok(positions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).norm())
        .fold(0.0, f64::max))
}
