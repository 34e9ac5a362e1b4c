//! Loading the TOML config files and parsing list-valued flags.

use std::path::Path;

use anyhow::Result;
use latact_core::demo::TaskSpec;
use latact_core::metrics::MetricConfig;
use latact_core::models::ModelConfig;
use serde::de::DeserializeOwned;

use crate::UsageError;

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Measure {
    Accuracy,
    Controllability,
    Consistency,
    Disentanglement,
    Reach,
}

fn load_toml<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read {what} config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| UsageError(format!("invalid {what} config {}: {e}", path.display())).into())
}

pub fn task(path: &Path) -> Result<TaskSpec> {
    let spec: TaskSpec = load_toml(path, "task")?;
    spec.validate().map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    Ok(spec)
}

pub fn model(path: &Path) -> Result<ModelConfig> {
    load_toml(path, "model")
}

pub fn metrics(path: Option<&Path>) -> Result<MetricConfig> {
    let cfg = match path {
        Some(p) => load_toml(p, "metric")?,
        None => MetricConfig::default(),
    };
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(cfg)
}

/// Parses `0-9`, `1,4,7` or mixtures such as `0-2,8`.
pub fn seeds(spec: &str) -> Result<Vec<u64>> {
    let bad = || UsageError(format!("invalid seed list `{spec}`"));
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((lo, hi)) => {
                let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
                let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
                if lo > hi {
                    return Err(bad().into());
                }
                out.extend(lo..=hi);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad().into());
    }
    Ok(out)
}

/// Parses comma-separated row-major matrix entries.
pub fn matrix(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| UsageError(format!("invalid matrix entry `{}`", v.trim())).into())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(seeds("0-3").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(seeds("5, 1,2-3").unwrap(), vec![5, 1, 2, 3]);
        assert!(seeds("3-1").is_err());
        assert!(seeds("x").is_err());
        assert!(seeds("").is_err());
    }

    #[test]
    fn matrix_entries() {
        assert_eq!(matrix("0,-1, 1,0").unwrap(), vec![0.0, -1.0, 1.0, 0.0]);
        assert!(matrix("1,a").is_err());
    }
}
