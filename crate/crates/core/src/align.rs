//! Orthogonal re-parameterizations of the latent space so that joystick
//! axes line up with task-meaningful motions.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::arm::{wrap_angle, ArmGeometry, JointState};
use crate::demo::{DemoDataset, TaskParams, TaskSpec};
use crate::error::{Error, Result};
use crate::models::TrainedModel;

/// Largest tolerated entry of `Q^T Q - I`.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentTransform {
    matrix: DMatrix<f64>,
}

impl AlignmentTransform {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::dim("alignment columns", matrix.nrows(), matrix.ncols()));
        }
        let residual = orthogonality_error(&matrix);
        if !(residual <= ORTHOGONALITY_TOL) {
            return Err(Error::NotOrthogonal(residual));
        }
        Ok(AlignmentTransform { matrix })
    }

    /// Builds a `d x d` transform from row-major entries.
    pub fn from_row_major(d: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != d * d {
            return Err(Error::dim("alignment entries", d * d, entries.len()));
        }
        Self::new(DMatrix::from_row_slice(d, d, entries))
    }

    pub fn identity(d: usize) -> Self {
        AlignmentTransform {
            matrix: DMatrix::identity(d, d),
        }
    }

    /// Planar rotation by `theta`, optionally preceded by flipping the second axis.
    pub fn planar(theta: f64, reflect: bool) -> Self {
        let (s, c) = theta.sin_cos();
        let flip = if reflect { -1.0 } else { 1.0 };
        let m = Matrix2::new(c, -s * flip, s, c * flip);
        AlignmentTransform {
            matrix: DMatrix::from_iterator(2, 2, m.iter().copied()),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> Self {
        AlignmentTransform {
            matrix: self.matrix.transpose(),
        }
    }

    /// `self` applied after `other`: `z -> self * (other * z)`.
    pub fn compose(&self, other: &AlignmentTransform) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::dim("alignment dimension", self.dim(), other.dim()));
        }
        Ok(AlignmentTransform {
            matrix: &self.matrix * &other.matrix,
        })
    }

    pub fn determinant(&self) -> f64 {
        self.matrix.determinant()
    }

    pub fn row_major(&self) -> Vec<f64> {
        let d = self.dim();
        (0..d * d).map(|k| self.matrix[(k / d, k % d)]).collect()
    }
}

/// Max-abs entry of `Q^T Q - I`.
pub fn orthogonality_error(q: &DMatrix<f64>) -> f64 {
    let gram = q.transpose() * q - DMatrix::identity(q.ncols(), q.ncols());
    gram.amax()
}

/// Replaces the model's alignment. Decoding `z` afterwards evaluates the
/// unaligned decoder at `Q z`.
pub fn set_alignment(model: &mut TrainedModel, transform: &AlignmentTransform) -> Result<()> {
    if transform.dim() != model.latent_dim() {
        return Err(Error::dim("alignment dimension", model.latent_dim(), transform.dim()));
    }
    let residual = orthogonality_error(transform.matrix());
    if !(residual <= ORTHOGONALITY_TOL) {
        return Err(Error::NotOrthogonal(residual));
    }
    model.replace_alignment(transform.matrix().clone());
    Ok(())
}

/// Task quantity whose change is used to judge latent motions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskMeasure {
    /// Planar end-effector position of one arm.
    EePosition { arm: usize },
    /// Heading of the segment from arm 0's to arm 1's end-effector (the held box).
    EeOrientation,
}

impl TaskMeasure {
    pub fn dim(self) -> usize {
        match self {
            TaskMeasure::EePosition { .. } => 2,
            TaskMeasure::EeOrientation => 1,
        }
    }

    pub fn evaluate(self, geometry: &ArmGeometry, state: &JointState) -> Result<DVector<f64>> {
        match self {
            TaskMeasure::EePosition { arm } => {
                let p = geometry.forward_kinematics(state, arm)?.position;
                Ok(DVector::from_vec(vec![p.x, p.y]))
            }
            TaskMeasure::EeOrientation => {
                let ee = geometry.ee_positions(state)?;
                if ee.len() < 2 {
                    return Err(Error::dim("arms for orientation", 2, ee.len()));
                }
                let d = ee[1] - ee[0];
                Ok(DVector::from_vec(vec![d.y.atan2(d.x)]))
            }
        }
    }

    /// Change of the measure from `from` to `to` (orientation wrapped).
    pub fn displacement(self, geometry: &ArmGeometry, from: &JointState, to: &JointState) -> Result<DVector<f64>> {
        let delta = self.evaluate(geometry, to)? - self.evaluate(geometry, from)?;
        Ok(match self {
            TaskMeasure::EeOrientation => delta.map(wrap_angle),
            TaskMeasure::EePosition { .. } => delta,
        })
    }
}

/// Reference direction, in measure space, that a joystick axis should produce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CanonicalAxis {
    Fixed { direction: [f64; 2] },
    /// Forward along `y = A sin(2 pi x / wavelength)` at the current x.
    WaveTangent { amplitude: f64, wavelength: f64 },
    /// Counter-clockwise around `center`.
    CircleTangent { center: [f64; 2] },
    /// Away from `center`.
    CircleRadial { center: [f64; 2] },
    /// Positive orientation change.
    Rotation,
}

impl CanonicalAxis {
    pub fn reference(self, geometry: &ArmGeometry, state: &JointState) -> Result<DVector<f64>> {
        let ee = || geometry.forward_kinematics(state, 0).map(|p| p.position);
        let unit = |v: Vector2<f64>| {
            let v = v / v.norm().max(1e-12);
            DVector::from_vec(vec![v.x, v.y])
        };
        Ok(match self {
            CanonicalAxis::Fixed { direction } => unit(Vector2::new(direction[0], direction[1])),
            CanonicalAxis::WaveTangent { amplitude, wavelength } => {
                let k = 2.0 * std::f64::consts::PI / wavelength;
                let slope = amplitude * k * (k * ee()?.x).cos();
                unit(Vector2::new(1.0, slope))
            }
            CanonicalAxis::CircleTangent { center } => {
                let r = ee()? - Vector2::new(center[0], center[1]);
                unit(Vector2::new(-r.y, r.x))
            }
            CanonicalAxis::CircleRadial { center } => unit(ee()? - Vector2::new(center[0], center[1])),
            CanonicalAxis::Rotation => DVector::from_vec(vec![1.0]),
        })
    }
}

/// Per-task measure plus one canonical axis per latent dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAxes {
    pub measure: TaskMeasure,
    pub axes: Vec<CanonicalAxis>,
}

impl TaskAxes {
    pub fn for_task(spec: &TaskSpec) -> Self {
        let ee = TaskMeasure::EePosition { arm: 0 };
        match &spec.task {
            TaskParams::Sine {
                amplitude, wavelength, ..
            } => TaskAxes {
                measure: ee,
                axes: vec![CanonicalAxis::WaveTangent {
                    amplitude: *amplitude,
                    wavelength: *wavelength,
                }],
            },
            TaskParams::Rotate { .. } => TaskAxes {
                measure: TaskMeasure::EeOrientation,
                axes: vec![CanonicalAxis::Rotation],
            },
            TaskParams::Circle { center, .. } => TaskAxes {
                measure: ee,
                axes: vec![
                    CanonicalAxis::CircleTangent { center: *center },
                    CanonicalAxis::CircleRadial { center: *center },
                ],
            },
            TaskParams::Reach { .. } => TaskAxes {
                measure: ee,
                axes: vec![CanonicalAxis::Fixed { direction: [1.0, 0.0] }],
            },
        }
    }

    /// Sign-carrying scalar for a displacement: its projection on axis `i`.
    pub fn signed_progress(&self, i: usize, geometry: &ArmGeometry, state: &JointState, displacement: &DVector<f64>) -> Result<f64> {
        let reference = self.axes[i].reference(geometry, state)?;
        Ok(reference.dot(displacement))
    }
}

/// Dataset state closest (Euclidean) to the coordinate-wise median state.
pub fn median_state(dataset: &DemoDataset) -> Result<JointState> {
    if dataset.is_empty() {
        return Err(Error::Config("median of an empty dataset".into()));
    }
    let n = dataset.dof();
    let median: Vec<f64> = (0..n)
        .map(|j| {
            let mut col: Vec<f64> = dataset.pairs.iter().map(|p| p.state.angles[j]).collect();
            col.sort_by(f64::total_cmp);
            col[col.len() / 2]
        })
        .collect();
    let target = DVector::from_vec(median);
    let best = dataset
        .pairs
        .iter()
        .min_by(|a, b| {
            let da = (&a.state.angles - &target).norm();
            let db = (&b.state.angles - &target).norm();
            da.total_cmp(&db)
        })
        .expect("nonempty");
    Ok(best.state.clone())
}

/// Mean cosine between each aligned unit axis's measure displacement (relative
/// to the displacement of `z = 0`) and its canonical reference.
fn alignment_score(model: &TrainedModel, candidate: &DMatrix<f64>, state: &JointState, axes: &TaskAxes) -> Result<f64> {
    let geometry = &model.geometry;
    let d = model.latent_dim();
    let rest_action = model.decode(&DVector::zeros(d), state)?;
    let rest = geometry.step(state, &rest_action)?;
    let mut total = 0.0;
    for i in 0..d {
        let z = candidate.column(i).into_owned();
        let action = model.decode(&z, state)?;
        let moved = geometry.step(state, &action)?;
        let delta = axes.measure.displacement(geometry, &rest, &moved)?;
        let reference = axes.axes[i].reference(geometry, state)?;
        let norm = delta.norm();
        if norm > 0.0 {
            total += reference.dot(&delta) / (norm * reference.norm());
        }
    }
    Ok(total / d as f64)
}

/// Searches sign flips (d = 1) or rotations in 1 degree steps with and
/// without reflection (d = 2) for the transform whose unit axes best follow
/// the task's canonical axes at the dataset's median state. Ties keep the
/// candidate closest to identity (searched first).
///
/// Candidates act on top of the model's current alignment, so an already
/// aligned model yields the identity; apply the result with
/// `current.compose(&proposal)`.
pub fn propose_alignment(model: &TrainedModel, dataset: &DemoDataset, axes: &TaskAxes) -> Result<AlignmentTransform> {
    let d = model.latent_dim();
    if d > 2 {
        return Err(Error::Unsupported(format!(
            "automatic alignment handles latent dimension 1 or 2, got {d}"
        )));
    }
    if axes.axes.len() != d {
        return Err(Error::dim("canonical axes", d, axes.axes.len()));
    }
    let state = median_state(dataset)?;
    let candidates: Vec<AlignmentTransform> = if d == 1 {
        vec![
            AlignmentTransform::identity(1),
            AlignmentTransform {
                matrix: DMatrix::from_element(1, 1, -1.0),
            },
        ]
    } else {
        // order by angular distance from identity so ties resolve toward it
        let mut angles: Vec<i32> = (0..360).collect();
        angles.sort_by_key(|&a| (a.min(360 - a), a));
        let mut list = Vec::with_capacity(720);
        for reflect in [false, true] {
            for &deg in &angles {
                list.push(AlignmentTransform::planar((deg as f64).to_radians(), reflect));
            }
        }
        list
    };
    let mut best = candidates[0].clone();
    let mut best_score = alignment_score(model, best.matrix(), &state, axes)?;
    for candidate in candidates.into_iter().skip(1) {
        let score = alignment_score(model, candidate.matrix(), &state, axes)?;
        if score > best_score + 1e-12 {
            best_score = score;
            best = candidate;
        }
    }
    Ok(best)
}
