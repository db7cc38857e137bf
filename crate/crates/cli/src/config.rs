//! Flat `key = value` run configuration (TOML). Command-line flags override
//! these values, which override the built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum BandwidthSetting {
    Value(f64),
    Named(String),
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<String>,
    pub eta: Option<f64>,
    pub eta_grid: Option<Vec<f64>>,
    pub eta_folds: Option<usize>,
    pub bandwidth: Option<BandwidthSetting>,
    pub knn: Option<usize>,
    pub sigma_min: Option<f64>,
    pub epsilon: Option<f64>,
    pub max_iterations: Option<usize>,
    pub ridge: Option<bool>,
    pub standardize: Option<bool>,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub labelers: Option<usize>,
    pub error_rate: Option<f64>,
    pub kmeans_restarts: Option<usize>,
    pub proportions: Option<Vec<f64>>,
    pub folds: Option<usize>,
    pub methods: Option<Vec<String>>,
    pub jobs: Option<usize>,
    pub baseline_ridge: Option<f64>,
    pub header: Option<bool>,
    pub input: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn load_optional(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    fn validate(&self) -> Result<()> {
        if let Some(BandwidthSetting::Named(s)) = &self.bandwidth {
            if s != "median" {
                bail!("bandwidth must be a positive number or \"median\", got {s:?}");
            }
        }
        Ok(())
    }
}

/// `None` means the median heuristic.
pub fn parse_bandwidth(s: &str) -> Result<Option<f64>> {
    if s.eq_ignore_ascii_case("median") {
        return Ok(None);
    }
    let h: f64 = s.parse().with_context(|| format!("bandwidth {s:?}"))?;
    check_positive("bandwidth", h)?;
    Ok(Some(h))
}

pub fn bandwidth_from_config(b: &BandwidthSetting) -> Result<Option<f64>> {
    match b {
        BandwidthSetting::Value(h) => {
            check_positive("bandwidth", *h)?;
            Ok(Some(*h))
        }
        BandwidthSetting::Named(s) => parse_bandwidth(s),
    }
}

pub fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        bail!("{name} must be positive and finite, got {v}");
    }
    Ok(())
}

pub fn check_range(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if !(v >= lo && v <= hi) {
        bail!("{name} must lie in [{lo}, {hi}], got {v}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_keys() {
        let c = RunConfig::parse("eta = 0.5\nbandwidth = \"median\"\nseeds = [1, 2]\nmethods = [\"lgp\"]\n").unwrap();
        assert_eq!(c.eta, Some(0.5));
        assert_eq!(c.bandwidth, Some(BandwidthSetting::Named("median".into())));
        assert_eq!(c.seeds, Some(vec![1, 2]));
        let c = RunConfig::parse("bandwidth = 2.5").unwrap();
        assert_eq!(bandwidth_from_config(c.bandwidth.as_ref().unwrap()).unwrap(), Some(2.5));
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(RunConfig::parse("etaa = 1.0").is_err());
        assert!(RunConfig::parse("bandwidth = \"wide\"").is_err());
        assert!(RunConfig::parse("eta = \"x\"").is_err());
        assert!(parse_bandwidth("-1").is_err());
        assert_eq!(parse_bandwidth("MEDIAN").unwrap(), None);
    }
}
