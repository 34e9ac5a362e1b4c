use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::task::TaskSpec;
use crate::arm::{ArmGeometry, JointState, JointVelocityAction};
use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};

pub const DATASET_MAGIC: &[u8; 10] = b"LATACT-DS\0";
pub const DATASET_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DemoPair {
    pub state: JointState,
    pub action: JointVelocityAction,
}

/// Ordered state-action pairs grouped into contiguous trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    pub spec: TaskSpec,
    pub pairs: Vec<DemoPair>,
    /// Index of the first pair of each trajectory, strictly increasing from 0.
    pub trajectory_starts: Vec<usize>,
}

impl DemoDataset {
    pub fn new(spec: TaskSpec, pairs: Vec<DemoPair>, trajectory_starts: Vec<usize>) -> Result<Self> {
        let n = spec.geometry.dof();
        for p in &pairs {
            if p.state.len() != n {
                return Err(Error::dim("dataset state", n, p.state.len()));
            }
            if p.action.len() != n {
                return Err(Error::dim("dataset action", n, p.action.len()));
            }
            if !p.action.is_finite() {
                return Err(Error::NonFinite("dataset action"));
            }
        }
        let valid_starts = trajectory_starts.first().is_none_or(|&s| s == 0)
            && trajectory_starts.windows(2).all(|w| w[0] < w[1])
            && trajectory_starts.last().is_none_or(|&s| s < pairs.len());
        if !valid_starts || (trajectory_starts.is_empty() && !pairs.is_empty()) {
            return Err(Error::Format("trajectory boundaries are inconsistent".into()));
        }
        Ok(DemoDataset {
            spec,
            pairs,
            trajectory_starts,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn geometry(&self) -> &ArmGeometry {
        &self.spec.geometry
    }

    pub fn dof(&self) -> usize {
        self.spec.geometry.dof()
    }

    pub fn trajectory_count(&self) -> usize {
        self.trajectory_starts.len()
    }

    pub fn trajectory_ranges(&self) -> Vec<Range<usize>> {
        let mut ranges = Vec::with_capacity(self.trajectory_starts.len());
        for (i, &start) in self.trajectory_starts.iter().enumerate() {
            let end = self
                .trajectory_starts
                .get(i + 1)
                .copied()
                .unwrap_or(self.pairs.len());
            ranges.push(start..end);
        }
        ranges
    }

    pub fn trajectory(&self, index: usize) -> &[DemoPair] {
        let range = self.trajectory_ranges()[index].clone();
        &self.pairs[range]
    }

    /// Rows are states (N x n).
    pub fn state_matrix(&self) -> DMatrix<f64> {
        let n = self.dof();
        DMatrix::from_fn(self.pairs.len(), n, |i, j| self.pairs[i].state.angles[j])
    }

    /// Rows are actions (N x n).
    pub fn action_matrix(&self) -> DMatrix<f64> {
        let n = self.dof();
        DMatrix::from_fn(self.pairs.len(), n, |i, j| self.pairs[i].action.velocities[j])
    }

    /// Largest deviation between a stored next state and `step(state, action)`
    /// within each trajectory.
    pub fn replay_error(&self) -> Result<f64> {
        let geometry = self.geometry();
        let mut worst: f64 = 0.0;
        for range in self.trajectory_ranges() {
            let traj = &self.pairs[range];
            let mut state = traj[0].state.clone();
            for pair in traj {
                worst = worst.max(state.distance(&pair.state));
                state = geometry.step(&state, &pair.action)?;
            }
        }
        Ok(worst)
    }

    /// Subset made of whole trajectories, in the given order.
    pub fn select_trajectories(&self, indices: &[usize]) -> DemoDataset {
        let ranges = self.trajectory_ranges();
        let mut pairs = Vec::new();
        let mut starts = Vec::with_capacity(indices.len());
        for &i in indices {
            starts.push(pairs.len());
            pairs.extend_from_slice(&self.pairs[ranges[i].clone()]);
        }
        DemoDataset {
            spec: self.spec.clone(),
            pairs,
            trajectory_starts: starts,
        }
    }

    /// Holds out `test_fraction` of whole trajectories (at least one on each
    /// side), chosen by a seeded shuffle. Returns `(train, test)`.
    pub fn split_by_trajectory(&self, test_fraction: f64, seed: u64) -> Result<(DemoDataset, DemoDataset)> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must lie in (0, 1), got {test_fraction}"
            )));
        }
        let count = self.trajectory_count();
        if count < 2 {
            return Err(Error::Config("need at least two trajectories to split".into()));
        }
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let test_count = ((count as f64 * test_fraction).round() as usize).clamp(1, count - 1);
        let mut test_idx = order[..test_count].to_vec();
        let mut train_idx = order[test_count..].to_vec();
        test_idx.sort_unstable();
        train_idx.sort_unstable();
        Ok((self.select_trajectories(&train_idx), self.select_trajectories(&test_idx)))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path)?;
        let mut w = ByteWriter::new(BufWriter::new(file));
        w.bytes(DATASET_MAGIC)?;
        w.u16(DATASET_VERSION)?;
        let meta = serde_json::to_string(&self.spec)?;
        w.string(&meta)?;
        let n = self.dof();
        w.u64(self.pairs.len() as u64)?;
        w.u32((2 * n) as u32)?;
        for pair in &self.pairs {
            for &v in pair.state.as_slice().iter().chain(pair.action.as_slice()) {
                w.f64(v)?;
            }
        }
        w.u32(self.trajectory_starts.len() as u32)?;
        for &s in &self.trajectory_starts {
            w.u32(s as u32)?;
        }
        w.finish()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<DemoDataset> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = ByteReader::new(&bytes);
        let magic = r.take(DATASET_MAGIC.len()).map_err(|_| Error::BadMagic(path.to_path_buf()))?;
        if magic != DATASET_MAGIC {
            return Err(Error::BadMagic(path.to_path_buf()));
        }
        let version = r.u16()?;
        if version != DATASET_VERSION {
            return Err(Error::Version {
                found: version,
                expected: DATASET_VERSION,
            });
        }
        let spec: TaskSpec = serde_json::from_str(&r.string()?)?;
        let n = spec.geometry.dof();
        let rows = r.u64()? as usize;
        let cols = r.u32()? as usize;
        if cols != 2 * n {
            return Err(Error::dim("dataset columns", 2 * n, cols));
        }
        let mut pairs = Vec::with_capacity(rows);
        let mut row = vec![0.0; cols];
        for _ in 0..rows {
            for v in row.iter_mut() {
                *v = r.f64()?;
            }
            pairs.push(DemoPair {
                state: JointState::new(row[..n].to_vec())?,
                action: JointVelocityAction::new(row[n..].to_vec()),
            });
        }
        let count = r.u32()? as usize;
        let mut starts = Vec::with_capacity(count);
        for _ in 0..count {
            starts.push(r.u32()? as usize);
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
        }
        DemoDataset::new(spec, pairs, starts)
    }

    /// Loads a dataset and checks it against the geometry a caller expects.
    pub fn load_for(path: impl AsRef<Path>, geometry: &ArmGeometry) -> Result<DemoDataset> {
        let ds = Self::load(path)?;
        if ds.dof() != geometry.dof() {
            return Err(Error::dim("dataset joint dimension", geometry.dof(), ds.dof()));
        }
        Ok(ds)
    }

    /// One `{"s": [...], "a": [...], "traj": i}` object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            s: &'a [f64],
            a: &'a [f64],
            traj: usize,
        }
        for (traj, range) in self.trajectory_ranges().into_iter().enumerate() {
            for pair in &self.pairs[range] {
                serde_json::to_writer(
                    &mut out,
                    &Line {
                        s: pair.state.as_slice(),
                        a: pair.action.as_slice(),
                        traj,
                    },
                )?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}
