//! Default task definitions for the four demonstration tasks.

use std::f64::consts::PI;

use super::task::{ControllerParams, ReachTiming, Rect, TaskKind, TaskParams, TaskSpec};
use crate::arm::ArmGeometry;

impl TaskSpec {
    pub fn preset(kind: TaskKind) -> TaskSpec {
        let (geometry, home_posture, task) = match kind {
            TaskKind::Sine => (
                ArmGeometry::single(5, 1.0),
                vec![0.8, -0.4, -0.4, -0.3, -0.2],
                TaskParams::Sine {
                    amplitude: 1.0,
                    wavelength: 6.0,
                    x_span: [1.5, 4.5],
                    speed_range: [0.01, 0.5],
                },
            ),
            TaskKind::Rotate => (
                ArmGeometry::dual(5, 1.0, [0.0, 0.0], [3.0, 0.0]),
                vec![1.2, -0.2, -0.2, -0.2, -0.2, PI - 1.2, 0.2, 0.2, 0.2, 0.2],
                TaskParams::Rotate {
                    pivot_region: Rect {
                        min: [1.0, 2.0],
                        max: [2.0, 3.0],
                    },
                    box_width: 1.0,
                    pivot_offset: [0.0, 0.0],
                    angle_range: [-1.0, 1.0],
                    angular_speed_range: [0.01, 0.3],
                },
            ),
            TaskKind::Circle => (
                ArmGeometry::single(5, 1.0),
                vec![1.2, -0.2, -0.2, -0.2, -0.2],
                TaskParams::Circle {
                    center: [0.0, 0.0],
                    radius_range: [2.0, 4.0],
                    angle_range: [PI / 6.0, 5.0 * PI / 6.0],
                    tangential_speed: 0.4,
                    radial_speed: 0.2,
                },
            ),
            TaskKind::Reach => (
                ArmGeometry::single(5, 1.0),
                vec![-0.3, 0.3, 0.3, 0.4, 0.4],
                TaskParams::Reach {
                    start_state: vec![-0.3, 0.3, 0.3, 0.4, 0.4],
                    goal_region: Rect {
                        min: [0.0, 3.0],
                        max: [2.0, 4.0],
                    },
                    goal_margin: 0.05,
                    path_bow: 0.5,
                    timing: ReachTiming::EaseOut,
                },
            ),
        };
        TaskSpec {
            name: kind.name().to_string(),
            geometry,
            latent_dim_intended: kind.intended_latent_dim(),
            target_pair_count: 10_000,
            trajectory_length: match kind {
                TaskKind::Sine | TaskKind::Rotate => 30,
                _ => 50,
            },
            rng_seed: 1,
            home_posture,
            posture_noise: 0.05,
            controller: ControllerParams::default(),
            task,
        }
    }
}
