use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which test pairs the controllability measure draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairScope {
    /// Start and goal come from the same held-out trajectory.
    SameTrajectory,
    /// Start and goal are any two held-out states.
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    EePosition,
    EeOrientation,
}

fn d_test_fraction() -> f64 {
    0.2
}
fn d_pairs() -> usize {
    1000
}
fn d_horizon() -> usize {
    100
}
fn d_cells() -> usize {
    41
}
fn d_states() -> usize {
    25
}
fn d_z_points() -> usize {
    21
}
fn d_z_range() -> [f64; 2] {
    [-1.0, 1.0]
}
fn d_angle_states() -> usize {
    100
}
fn d_goals() -> usize {
    100
}
fn d_true() -> bool {
    true
}
fn d_scope() -> PairScope {
    PairScope::SameTrajectory
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllabilityConfig {
    #[serde(default = "d_pairs")]
    pub pair_count: usize,
    /// Step cap K.
    #[serde(default = "d_horizon")]
    pub horizon: usize,
    /// Grid points per latent axis over [-1, 1].
    #[serde(default = "d_cells")]
    pub grid_cells: usize,
    /// Points per axis of the single refinement around the best coarse cell (0 disables).
    #[serde(default = "d_cells")]
    pub refine_cells: usize,
    #[serde(default = "d_scope")]
    pub pair_scope: PairScope,
}

impl Default for ControllabilityConfig {
    fn default() -> Self {
        ControllabilityConfig {
            pair_count: d_pairs(),
            horizon: d_horizon(),
            grid_cells: d_cells(),
            refine_cells: d_cells(),
            pair_scope: d_scope(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyConfig {
    #[serde(default = "d_states")]
    pub state_count: usize,
    #[serde(default = "d_z_points")]
    pub z_points: usize,
    #[serde(default = "d_z_range")]
    pub z_range: [f64; 2],
    /// Held-out trajectory the states are taken from.
    #[serde(default)]
    pub trajectory_index: usize,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            state_count: d_states(),
            z_points: d_z_points(),
            z_range: d_z_range(),
            trajectory_index: 0,
        }
    }
}

/// Which measures a suite computes. Disentanglement needs d = 2 and reach
/// quality a Reach task; they are skipped elsewhere regardless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricToggles {
    #[serde(default = "d_true")]
    pub accuracy: bool,
    #[serde(default = "d_true")]
    pub controllability: bool,
    #[serde(default = "d_true")]
    pub consistency: bool,
    #[serde(default = "d_true")]
    pub disentanglement: bool,
    #[serde(default = "d_true")]
    pub reach: bool,
}

impl Default for MetricToggles {
    fn default() -> Self {
        MetricToggles {
            accuracy: true,
            controllability: true,
            consistency: true,
            disentanglement: true,
            reach: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    #[serde(default = "d_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub controllability: ControllabilityConfig,
    #[serde(default)]
    pub consistency: ConsistencyConfig,
    /// Overrides the task's own displacement measure.
    #[serde(default)]
    pub measure: Option<MeasureKind>,
    #[serde(default = "d_angle_states")]
    pub disentanglement_states: usize,
    #[serde(default = "d_goals")]
    pub reach_goals: usize,
    /// Run automatic alignment on every trained model before measuring.
    #[serde(default = "d_true")]
    pub auto_align: bool,
    #[serde(default)]
    pub enabled: MetricToggles,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            test_fraction: d_test_fraction(),
            rng_seed: 0,
            controllability: ControllabilityConfig::default(),
            consistency: ConsistencyConfig::default(),
            measure: None,
            disentanglement_states: d_angle_states(),
            reach_goals: d_goals(),
            auto_align: true,
            enabled: MetricToggles::default(),
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        let c = &self.controllability;
        if c.grid_cells < 2 || c.refine_cells == 1 {
            return Err(Error::Config("controllability grids need at least 2 points".into()));
        }
        let s = &self.consistency;
        if s.state_count == 0 || s.z_points < 2 || !(s.z_range[0] < s.z_range[1]) {
            return Err(Error::Config("consistency grid must be nonempty and ordered".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_gives_defaults() {
        let c: MetricConfig = toml::from_str("").unwrap();
        assert_eq!(c, MetricConfig::default());
        assert_eq!(c.controllability.grid_cells, 41);
        assert_eq!(c.consistency.z_points, 21);
    }

    #[test]
    fn validation() {
        let mut c = MetricConfig::default();
        assert!(c.validate().is_ok());
        c.test_fraction = 1.0;
        assert!(c.validate().is_err());
        let mut c = MetricConfig::default();
        c.consistency.z_points = 1;
        assert!(c.validate().is_err());
    }
}
