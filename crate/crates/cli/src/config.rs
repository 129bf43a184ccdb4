//! The run configuration document and its command-line overrides.

use std::path::{Path, PathBuf};

use cournot_core::verification::GridSpec;
use cournot_core::{CostSpec, DiscreteMeasure, PriceImpactParams, ScenarioTree};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Problems with the configuration itself, reported with exit status 2.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Mode {
    Certify,
    SolveIter,
    SolveQuadratic,
    Verify,
    Oracle,
    LoopProbe,
    ExampleN2,
}

/// An inline JSON document, or a string holding a path to one relative to
/// the config file. Kept raw so the document's own parser reports errors.
pub type Source = serde_json::Value;

/// What `verify` checks: a measure and the adapted map claimed to respond to
/// it. A `result.json` written by a solve run has both fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub nu_hat: DiscreteMeasure,
    pub map: cournot_core::AdaptedMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { lo: -4.0, hi: 4.0, step: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub tree: Option<Source>,
    #[serde(default)]
    pub cost: Option<CostSpec>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub damping: f64,
    #[serde(default)]
    pub seed: u64,
    /// Refuse to iterate unless the contraction certificate passes.
    #[serde(default)]
    pub strict: bool,
    /// Starting measure for `solve_iter`; the type law when absent.
    #[serde(default)]
    pub nu0: Option<Source>,
    #[serde(default)]
    pub candidate: Option<Source>,
    #[serde(default = "default_eps_values")]
    pub eps_values: Vec<f64>,
    #[serde(default = "default_t_param", rename = "T_param")]
    pub t_param: f64,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

fn default_tol() -> f64 {
    1e-10
}

fn default_max_iter() -> usize {
    10_000
}

fn default_eps_values() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3]
}

fn default_t_param() -> f64 {
    1.0
}

fn default_trials() -> usize {
    1000
}

/// Parameters of the two-stage Bernoulli example when the config has no
/// two-stage price-impact cost of its own.
pub fn default_example_params() -> PriceImpactParams {
    PriceImpactParams { k: 1.0, a: 0.1, s0: 0.5, q0: 1.0, n: 2 }
}

/// Flags that override fields of the config document.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub strict: bool,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<(Self, PathBuf), ConfigError> {
        let mut config: RunConfig = serde_json::from_str(&read(path)?)?;
        if let Some(mode) = overrides.mode {
            config.mode = mode;
        }
        if let Some(tol) = overrides.tol {
            config.tol = tol;
        }
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        config.strict |= overrides.strict;
        config.validate()?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((config, base))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.tol > 0.0) {
            return Err(ConfigError::Invalid(format!("tol must be positive, got {}", self.tol)));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(ConfigError::Invalid(format!("damping must lie in [0, 1), got {}", self.damping)));
        }
        if self.grid.hi <= self.grid.lo || !(self.grid.step > 0.0) {
            return Err(ConfigError::Invalid("grid needs lo < hi and a positive step".into()));
        }
        if self.eps_values.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(ConfigError::Invalid("eps_values must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> Result<GridSpec, ConfigError> {
        GridSpec::with_step(self.grid.lo, self.grid.hi, self.grid.step).map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

/// The JSON text of an inline-or-path document; paths are relative to `base`.
pub fn document_text(source: &Source, base: &Path) -> Result<String, ConfigError> {
    match source {
        serde_json::Value::String(path) => read(&base.join(path)),
        inline => Ok(inline.to_string()),
    }
}

pub fn load_tree(source: &Source, base: &Path) -> anyhow::Result<ScenarioTree> {
    Ok(ScenarioTree::from_json(&document_text(source, base)?)?)
}

pub fn load_measure(source: &Source, base: &Path) -> anyhow::Result<DiscreteMeasure> {
    Ok(DiscreteMeasure::from_json(&document_text(source, base)?)?)
}

pub fn load_candidate(source: &Source, base: &Path) -> anyhow::Result<Candidate> {
    let text = document_text(source, base)?;
    let candidate: Candidate = serde_json::from_str(&text).map_err(ConfigError::Parse)?;
    Ok(candidate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_optional_fields() {
        let config: RunConfig = serde_json::from_str(r#"{ "mode": "example_n2" }"#).unwrap();
        assert_eq!(config.tol, 1e-10);
        assert_eq!(config.max_iter, 10_000);
        assert_eq!(config.damping, 0.0);
        assert!(!config.strict);
        assert_eq!(config.eps_values, vec![1e-1, 1e-2, 1e-3]);
        assert_eq!(config.t_param, 1.0);
        assert!(config.validate().is_ok());
    }

    #[test]
    fn inline_documents_and_paths() {
        let base = Path::new("/nonexistent");
        let inline = serde_json::json!({ "dim": 1, "atoms": [{ "y": [2.0], "w": 1.0 }] });
        assert_eq!(load_measure(&inline, base).unwrap(), DiscreteMeasure::dirac(vec![2.0]).unwrap());
        let err = load_measure(&serde_json::json!("nu.json"), base).unwrap_err();
        assert!(err.downcast_ref::<ConfigError>().is_some());
    }
}
