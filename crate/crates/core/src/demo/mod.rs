//! Synthetic demonstrations for the Sine, Rotate, Circle and Reach tasks.
//!
//! Each trajectory is produced by a damped least-squares tracking controller
//! following an analytic end-effector reference, starting from an
//! inverse-kinematics solution near a (randomly perturbed) home posture.

mod controller;
mod dataset;
mod generate;
mod presets;
mod task;

pub use controller::{solve_ik, solve_ik_near, track_all, tracking_controller};
pub use dataset::{DemoDataset, DemoPair, DATASET_MAGIC, DATASET_VERSION};
pub use generate::{box_grasps, generate, sine_y};
pub use task::{ControllerParams, ReachTiming, Rect, TaskKind, TaskParams, TaskSpec};
