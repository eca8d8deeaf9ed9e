//! Run configurations, one TOML schema per subcommand.
//!
//! Unknown keys are rejected everywhere. See `configs/README.md` for the
//! full schema.

use std::path::Path;

use kinlab::drift::{MollifierSpec, TamingParams};
use kinlab::harness::{DensityOptions, ExperimentConfig};
use kinlab::scheme::InnerQuadrature;
use kinlab::PhaseState;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Tamed,
    /// Untamed drift; needs a bounded drift.
    Standard,
}

fn default_scheme() -> SchemeKind {
    SchemeKind::Tamed
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub drift: String,
    pub dim: usize,
    pub taming: TamingParams,
    #[serde(default)]
    pub mollifier: MollifierSpec,
    #[serde(default)]
    pub inner: InnerQuadrature,
    #[serde(default = "default_scheme")]
    pub scheme: SchemeKind,
    pub z0: PhaseState,
    pub horizon: f64,
    pub n: usize,
    pub paths: usize,
    pub seed: u64,
}

/// Pass rule for `weak-rate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakVerdict {
    pub max_slope: f64,
    #[serde(default)]
    pub max_stderr_slope: Option<f64>,
    /// Functionals the rule applies to; all of them when empty.
    #[serde(default)]
    pub functionals: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakRateConfig {
    pub experiment: ExperimentConfig,
    pub verdict: WeakVerdict,
}

fn default_floor_ratio() -> f64 {
    3.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityVerdict {
    pub max_slope: f64,
    /// Smallest fitted distance over the noise floor.
    #[serde(default = "default_floor_ratio")]
    pub min_floor_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    pub experiment: ExperimentConfig,
    pub density: DensityOptions,
    pub verdict: DensityVerdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BesovGrid {
    pub extent: f64,
    pub resolution: usize,
    /// Number of dyadic blocks beyond the first; the largest the grid
    /// supports when absent.
    #[serde(default)]
    pub levels: Option<usize>,
}

fn default_slope_tolerance() -> f64 {
    kinlab::besov::RATE_SLACK
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BesovConfig {
    pub drift: String,
    pub dim: usize,
    pub taming: TamingParams,
    #[serde(default)]
    pub mollifier: MollifierSpec,
    pub n_set: Vec<usize>,
    pub grid: BesovGrid,
    /// Largest accepted `|slope - target|`.
    #[serde(default = "default_slope_tolerance")]
    pub slope_tolerance: f64,
}

fn default_growth_tolerance() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TamingCheckConfig {
    pub drift: String,
    pub dim: usize,
    pub taming: TamingParams,
    #[serde(default)]
    pub mollifier: MollifierSpec,
    pub n_set: Vec<usize>,
    pub sample_budget: usize,
    pub seed: u64,
    /// Largest accepted gap between the fitted growth exponent and `kappa`
    /// for the cutoff.
    #[serde(default = "default_growth_tolerance")]
    pub growth_tolerance: f64,
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

/// SHA-256 of the canonical JSON form of the parsed configuration, so that
/// formatting, comments and defaulted keys do not change the digest.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String, CliError> {
    let value = serde_json::to_value(cfg).map_err(|e| CliError::Internal(e.to_string()))?;
    // `serde_json::Value` keeps object keys sorted.
    let canonical = serde_json::to_string(&value).map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(hex(&Sha256::digest(canonical.as_bytes())))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
drift = "zero"
dim = 1
z0 = { x = [0.0], v = [1.0] }
horizon = 1.0
n = 8
paths = 100
seed = 1
[taming]
kind = "cutoff"
"#;

    #[test]
    fn sample_config_parses_with_defaults() {
        let c: SampleConfig = parse(SAMPLE).unwrap();
        assert_eq!(c.scheme, SchemeKind::Tamed);
        assert_eq!(c.inner, InnerQuadrature::Gauss(4));
        assert_eq!(c.taming.kappa, 0.25);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let text = format!("{SAMPLE}\nkapa = 0.1\n");
        assert!(matches!(parse::<SampleConfig>(&text), Err(CliError::Config(_))));
        let text = SAMPLE.replace("kind = \"cutoff\"", "kind = \"cutoff\"\nkapa = 0.1");
        assert!(matches!(parse::<SampleConfig>(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn hash_ignores_formatting() {
        let a: SampleConfig = parse(SAMPLE).unwrap();
        let b: SampleConfig = parse(&SAMPLE.replace("n = 8", "n    =   8 # steps")).unwrap();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        let c: SampleConfig = parse(&SAMPLE.replace("n = 8", "n = 9")).unwrap();
        assert_ne!(config_hash(&a).unwrap(), config_hash(&c).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 64);
    }
}
