use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::arm::ArmGeometry;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Sine,
    Rotate,
    Circle,
    Reach,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Sine => "sine",
            TaskKind::Rotate => "rotate",
            TaskKind::Circle => "circle",
            TaskKind::Reach => "reach",
        }
    }

    /// Latent dimension each task is designed around.
    pub fn intended_latent_dim(self) -> usize {
        match self {
            TaskKind::Circle => 2,
            _ => 1,
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        p[0] >= self.min[0] - tol
            && p[0] <= self.max[0] + tol
            && p[1] >= self.min[1] - tol
            && p[1] <= self.max[1] + tol
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
        ]
    }
}

fn default_refine() -> bool {
    true
}

/// Damped least-squares tracking gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub damping: f64,
    pub gain: f64,
    /// Iterate the tracking step to convergence inside each control period so
    /// the end-effector lands on every waypoint. When false, a single step
    /// with `gain` is taken.
    #[serde(default = "default_refine")]
    pub refine: bool,
}

impl Default for ControllerParams {
    fn default() -> Self {
        ControllerParams {
            damping: 0.1,
            gain: 0.5,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskParams {
    /// End-effector follows `y = amplitude * sin(2 pi x / wavelength)`.
    Sine {
        amplitude: f64,
        wavelength: f64,
        x_span: [f64; 2],
        /// Range of |dx/dt| in m/s; direction is sampled per trajectory.
        speed_range: [f64; 2],
    },
    /// Two arms carry a rigid box and rotate it about a point fixed in the box frame.
    Rotate {
        pivot_region: Rect,
        box_width: f64,
        /// Pivot expressed in the box frame (box center at the origin).
        pivot_offset: [f64; 2],
        /// Box angles the whole rotation stays within.
        angle_range: [f64; 2],
        /// Range of |angular speed| in rad/s.
        angular_speed_range: [f64; 2],
    },
    /// End-effector moves along and across concentric circles.
    Circle {
        center: [f64; 2],
        radius_range: [f64; 2],
        angle_range: [f64; 2],
        /// Max |tangential speed| in m/s.
        tangential_speed: f64,
        /// Max |radial speed| in m/s.
        radial_speed: f64,
    },
    /// From a fixed start toward points spread across a goal region.
    Reach {
        start_state: Vec<f64>,
        goal_region: Rect,
        goal_margin: f64,
        /// Sideways bow of the path, signed by which half of the region the goal lies in.
        path_bow: f64,
        #[serde(default)]
        timing: ReachTiming,
    },
}

/// Progress-versus-time profile of a reaching demonstration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReachTiming {
    /// Starts at full speed and decelerates linearly to rest at the goal.
    #[default]
    EaseOut,
    /// Constant speed along the path.
    Constant,
    /// Minimum-jerk: at rest at both ends.
    MinJerk,
}

impl ReachTiming {
    /// Path fraction covered at normalized time `tau` in [0, 1].
    pub fn progress(self, tau: f64) -> f64 {
        match self {
            ReachTiming::EaseOut => tau * (2.0 - tau),
            ReachTiming::Constant => tau,
            ReachTiming::MinJerk => tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau),
        }
    }
}

impl TaskParams {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskParams::Sine { .. } => TaskKind::Sine,
            TaskParams::Rotate { .. } => TaskKind::Rotate,
            TaskParams::Circle { .. } => TaskKind::Circle,
            TaskParams::Reach { .. } => TaskKind::Reach,
        }
    }
}

fn default_trajectory_length() -> usize {
    50
}

fn default_pair_count() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub geometry: ArmGeometry,
    pub latent_dim_intended: usize,
    #[serde(default = "default_pair_count")]
    pub target_pair_count: usize,
    #[serde(default = "default_trajectory_length")]
    pub trajectory_length: usize,
    pub rng_seed: u64,
    /// Posture the inverse-kinematics warm start perturbs (length n).
    pub home_posture: Vec<f64>,
    /// Std-dev (rad) of Gaussian noise added to the home posture per trajectory.
    pub posture_noise: f64,
    #[serde(default)]
    pub controller: ControllerParams,
    pub task: TaskParams,
}

impl TaskSpec {
    pub fn kind(&self) -> TaskKind {
        self.task.kind()
    }

    pub fn trajectory_count(&self) -> usize {
        self.target_pair_count.div_ceil(self.trajectory_length)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let bad = |msg: &str| Err(Error::Config(format!("{}: {msg}", self.name)));
        if self.target_pair_count == 0 {
            return bad("target_pair_count must be > 0");
        }
        if self.trajectory_length == 0 {
            return bad("trajectory_length must be > 0");
        }
        if self.home_posture.len() != self.geometry.dof() {
            return Err(Error::dim(
                "home_posture",
                self.geometry.dof(),
                self.home_posture.len(),
            ));
        }
        if self.posture_noise < 0.0 {
            return bad("posture_noise must be >= 0");
        }
        let c = self.controller;
        if !(c.damping >= 0.0 && c.gain > 0.0 && c.gain <= 1.0) {
            return bad("controller needs damping >= 0 and 0 < gain <= 1");
        }
        let horizon = self.trajectory_length as f64 * self.geometry.dt;
        let ordered = |r: [f64; 2]| r[0] <= r[1];
        match &self.task {
            TaskParams::Sine {
                amplitude,
                wavelength,
                x_span,
                speed_range,
            } => {
                if self.geometry.arm_count != 1 {
                    return bad("sine uses one arm");
                }
                if *amplitude < 0.0 || *wavelength <= 0.0 || !ordered(*x_span) {
                    return bad("sine needs amplitude >= 0, wavelength > 0, ordered x_span");
                }
                if !(speed_range[0] > 0.0 && ordered(*speed_range)) {
                    return bad("sine speed_range must be positive and ordered");
                }
                if speed_range[1] * horizon > x_span[1] - x_span[0] {
                    return bad("fastest sine trajectory overruns x_span");
                }
            }
            TaskParams::Rotate {
                pivot_region,
                box_width,
                angle_range,
                angular_speed_range,
                ..
            } => {
                if self.geometry.arm_count != 2 {
                    return bad("rotate uses two arms");
                }
                if *box_width <= 0.0 || pivot_region.width() < 0.0 || pivot_region.height() < 0.0 {
                    return bad("rotate needs box_width > 0 and a valid pivot region");
                }
                if !ordered(*angle_range) || !ordered(*angular_speed_range) || angular_speed_range[0] <= 0.0 {
                    return bad("rotate ranges must be ordered, speeds positive");
                }
            }
            TaskParams::Circle {
                radius_range,
                angle_range,
                tangential_speed,
                radial_speed,
                ..
            } => {
                if self.geometry.arm_count != 1 {
                    return bad("circle uses one arm");
                }
                if radius_range[0] <= 0.0 || !ordered(*radius_range) || !ordered(*angle_range) {
                    return bad("circle ranges must be positive and ordered");
                }
                if *tangential_speed <= 0.0 || *radial_speed <= 0.0 {
                    return bad("circle speeds must be positive");
                }
                if radial_speed * horizon > radius_range[1] - radius_range[0] {
                    return bad("radial motion overruns radius_range");
                }
                if tangential_speed * horizon / radius_range[0] > angle_range[1] - angle_range[0] {
                    return bad("tangential motion overruns angle_range");
                }
                if angle_range[1] - angle_range[0] > 2.0 * PI {
                    return bad("angle_range wider than a full turn");
                }
            }
            TaskParams::Reach {
                start_state,
                goal_region,
                goal_margin,
                ..
            } => {
                if self.geometry.arm_count != 1 {
                    return bad("reach uses one arm");
                }
                if start_state.len() != self.geometry.dof() {
                    return Err(Error::dim("reach start_state", self.geometry.dof(), start_state.len()));
                }
                if *goal_margin < 0.0
                    || goal_region.width() <= 2.0 * goal_margin
                    || goal_region.height() <= 2.0 * goal_margin
                {
                    return bad("goal region must be larger than twice the margin");
                }
            }
        }
        Ok(())
    }
}
