//! Planar serial arms: forward kinematics, Jacobians and the explicit-Euler
//! transition `s' = s + a * dt`.
//!
//! A geometry holds one or two arms of `joints_per_arm` revolute joints with
//! equal links. Two-arm states are laid out as arm 0's joints followed by
//! arm 1's joints. Joint angles are never wrapped; only [`EePose::orientation`]
//! is wrapped to `(-pi, pi]`.

use std::f64::consts::PI;

use nalgebra::{DVector, Matrix2xX, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_action_cap() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmGeometry {
    pub arm_count: usize,
    pub joints_per_arm: usize,
    pub link_length: f64,
    pub base_positions: Vec<[f64; 2]>,
    pub dt: f64,
    /// Per-joint speed limit used by the teleoperation loop (rad/s).
    #[serde(default = "default_action_cap")]
    pub action_cap: f64,
}

impl Default for ArmGeometry {
    fn default() -> Self {
        ArmGeometry::single(5, 1.0)
    }
}

impl ArmGeometry {
    pub fn single(joints: usize, link_length: f64) -> Self {
        ArmGeometry {
            arm_count: 1,
            joints_per_arm: joints,
            link_length,
            base_positions: vec![[0.0, 0.0]],
            dt: 0.1,
            action_cap: default_action_cap(),
        }
    }

    pub fn dual(joints: usize, link_length: f64, left: [f64; 2], right: [f64; 2]) -> Self {
        ArmGeometry {
            arm_count: 2,
            joints_per_arm: joints,
            link_length,
            base_positions: vec![left, right],
            dt: 0.1,
            action_cap: default_action_cap(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.arm_count == 1 || self.arm_count == 2) {
            return Err(Error::Config(format!(
                "arm_count must be 1 or 2, got {}",
                self.arm_count
            )));
        }
        if self.joints_per_arm == 0 {
            return Err(Error::Config("joints_per_arm must be >= 1".into()));
        }
        if !(self.link_length > 0.0 && self.link_length.is_finite()) {
            return Err(Error::Config("link_length must be positive".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if !(self.action_cap > 0.0) {
            return Err(Error::Config("action_cap must be positive".into()));
        }
        if self.base_positions.len() != self.arm_count {
            return Err(Error::dim(
                "base_positions",
                self.arm_count,
                self.base_positions.len(),
            ));
        }
        Ok(())
    }

    /// Total joint dimension `n`.
    pub fn dof(&self) -> usize {
        self.arm_count * self.joints_per_arm
    }

    /// Distance from base to a fully stretched end-effector.
    pub fn reach(&self) -> f64 {
        self.joints_per_arm as f64 * self.link_length
    }

    pub fn base(&self, arm_index: usize) -> Vector2<f64> {
        let b = self.base_positions[arm_index];
        Vector2::new(b[0], b[1])
    }

    fn check_state(&self, state: &JointState) -> Result<()> {
        if state.len() != self.dof() {
            return Err(Error::dim("joint state", self.dof(), state.len()));
        }
        Ok(())
    }

    fn check_arm(&self, arm_index: usize) -> Result<()> {
        if arm_index >= self.arm_count {
            return Err(Error::dim("arm index", self.arm_count, arm_index));
        }
        Ok(())
    }

    fn arm_angles<'a>(&self, state: &'a JointState, arm_index: usize) -> &'a [f64] {
        let start = arm_index * self.joints_per_arm;
        &state.angles.as_slice()[start..start + self.joints_per_arm]
    }

    pub fn forward_kinematics(&self, state: &JointState, arm_index: usize) -> Result<EePose> {
        self.check_state(state)?;
        self.check_arm(arm_index)?;
        let mut pos = self.base(arm_index);
        let mut cumulative = 0.0;
        for &q in self.arm_angles(state, arm_index) {
            cumulative += q;
            pos += self.link_length * Vector2::new(cumulative.cos(), cumulative.sin());
        }
        Ok(EePose {
            position: pos,
            orientation: wrap_angle(cumulative),
            arm_index,
        })
    }

    /// End-effector positions of every arm, in arm order.
    pub fn ee_positions(&self, state: &JointState) -> Result<Vec<Vector2<f64>>> {
        (0..self.arm_count)
            .map(|arm| self.forward_kinematics(state, arm).map(|p| p.position))
            .collect()
    }

    /// Positional Jacobian of one arm's end-effector, 2 x joints_per_arm.
    pub fn jacobian(&self, state: &JointState, arm_index: usize) -> Result<Matrix2xX<f64>> {
        self.check_state(state)?;
        self.check_arm(arm_index)?;
        let angles = self.arm_angles(state, arm_index);
        let k = angles.len();
        let mut link_dirs = Vec::with_capacity(k);
        let mut cumulative = 0.0;
        for &q in angles {
            cumulative += q;
            link_dirs.push(Vector2::new(cumulative.cos(), cumulative.sin()) * self.link_length);
        }
        let mut jac = Matrix2xX::zeros(k);
        // suffix sums of link vectors: column k sees every link at or after joint k
        let mut tail = Vector2::zeros();
        for col in (0..k).rev() {
            tail += link_dirs[col];
            jac[(0, col)] = -tail.y;
            jac[(1, col)] = tail.x;
        }
        Ok(jac)
    }

    pub fn step(&self, state: &JointState, action: &JointVelocityAction) -> Result<JointState> {
        self.check_state(state)?;
        if action.len() != self.dof() {
            return Err(Error::dim("action", self.dof(), action.len()));
        }
        if !action.is_finite() {
            return Err(Error::NonFinite("action"));
        }
        Ok(JointState {
            angles: &state.angles + &action.velocities * self.dt,
        })
    }

    /// Runs `policy` for `horizon` steps, returning `horizon + 1` states
    /// starting with `start`.
    pub fn rollout<F>(&self, start: &JointState, mut policy: F, horizon: usize) -> Result<Vec<JointState>>
    where
        F: FnMut(&JointState) -> JointVelocityAction,
    {
        self.check_state(start)?;
        let mut traj = Vec::with_capacity(horizon + 1);
        traj.push(start.clone());
        for completed in 0..horizon {
            let current = traj.last().expect("trajectory is never empty");
            let action = policy(current);
            if !action.is_finite() {
                return Err(Error::RolloutAborted {
                    completed,
                    partial: traj.iter().map(|s| s.angles.as_slice().to_vec()).collect(),
                });
            }
            let next = self.step(current, &action)?;
            traj.push(next);
        }
        Ok(traj)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub angles: DVector<f64>,
}

impl JointState {
    pub fn new(angles: Vec<f64>) -> Result<Self> {
        if angles.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("joint state"));
        }
        Ok(JointState {
            angles: DVector::from_vec(angles),
        })
    }

    pub fn zeros(n: usize) -> Self {
        JointState {
            angles: DVector::zeros(n),
        }
    }

    pub fn from_vector(angles: DVector<f64>) -> Self {
        JointState { angles }
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.angles.as_slice()
    }

    pub fn distance(&self, other: &JointState) -> f64 {
        (&self.angles - &other.angles).norm()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointVelocityAction {
    pub velocities: DVector<f64>,
    /// Per-joint magnitude cap that has been applied, if any.
    pub cap: Option<f64>,
}

impl JointVelocityAction {
    pub fn new(velocities: Vec<f64>) -> Self {
        JointVelocityAction {
            velocities: DVector::from_vec(velocities),
            cap: None,
        }
    }

    pub fn from_vector(velocities: DVector<f64>) -> Self {
        JointVelocityAction {
            velocities,
            cap: None,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_vector(DVector::zeros(n))
    }

    /// Clamps every joint velocity into `[-cap, cap]`.
    pub fn capped(mut self, cap: f64) -> Self {
        self.velocities.apply(|v| *v = v.clamp(-cap, cap));
        self.cap = Some(cap);
        self
    }

    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.velocities.iter().all(|v| v.is_finite())
    }

    pub fn as_slice(&self) -> &[f64] {
        self.velocities.as_slice()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EePose {
    pub position: Vector2<f64>,
    pub orientation: f64,
    pub arm_index: usize,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut w = theta.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}
