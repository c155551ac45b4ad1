//! Versioned JSON run configurations and the shipped presets.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    default_alpha_schedule, AttributeSpec, LexiconSpec, ReferentSpec, Tradeoff, DEFAULT_CAPACITY,
    DEFAULT_VALUE_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::information::CategoricalDistribution;
use crate::instance_opt::DEFAULT_REGIME_TOL;
use crate::optim::OptimizerConfig;
use crate::system_opt::SystemConfig;
use crate::theorems::DEFAULT_TOL;

pub const SCHEMA_VERSION: u32 = 1;

/// Presets shipped with the crate, by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("gender", include_str!("../presets/gender.json")),
    ("numerosity", include_str!("../presets/numerosity.json")),
    ("system-desk", include_str!("../presets/system_desk.json")),
    ("system-full", include_str!("../presets/system_full.json")),
];

/// A semantic attribute with its marginal over referent instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub name: String,
    pub labels: Vec<String>,
    pub marginal: Vec<f64>,
}

impl FeatureSpec {
    /// Male, female, other at 0.49 / 0.49 / 0.02.
    pub fn gender() -> Self {
        Self {
            name: "gender".into(),
            labels: vec!["male".into(), "female".into(), "other".into()],
            marginal: vec![0.49, 0.49, 0.02],
        }
    }

    /// Numerosities 1..=10 with `p(n) ∝ 1/n²`.
    pub fn numerosity() -> Self {
        let w: Vec<f64> = (1..=10).map(|n| 1.0 / (n * n) as f64).collect();
        let z: f64 = w.iter().sum();
        Self {
            name: "numerosity".into(),
            labels: (1..=10).map(|n| n.to_string()).collect(),
            marginal: w.iter().map(|v| v / z).collect(),
        }
    }

    pub fn distribution(&self) -> Result<CategoricalDistribution> {
        CategoricalDistribution::new(self.labels.clone(), self.marginal.clone())
    }

    pub fn attribute(&self) -> Result<AttributeSpec> {
        AttributeSpec::new(self.name.clone(), self.labels.clone())
    }

    pub fn referent(&self, alpha: Tradeoff) -> Result<ReferentSpec> {
        ReferentSpec::single(self.distribution()?, alpha)
    }

    /// `k` equally weighted referents with the default `α` schedule.
    pub fn lexicon(&self, k: usize, beta: Tradeoff, w_capacity: usize) -> Result<LexiconSpec> {
        LexiconSpec::uniform(
            self.attribute()?,
            &self.distribution()?,
            &default_alpha_schedule(k),
            beta,
            w_capacity,
        )
    }
}

fn default_version() -> u32 {
    SCHEMA_VERSION
}

fn default_capacity() -> usize {
    DEFAULT_CAPACITY
}

fn default_threshold() -> f64 {
    DEFAULT_VALUE_THRESHOLD
}

fn default_regime_tol() -> f64 {
    DEFAULT_REGIME_TOL
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

/// `α ∈ {0, 0.05, 0.1, 0.3, 0.5, 0.75, ∞}`.
pub fn default_alpha_sweep() -> Vec<Tradeoff> {
    let mut v: Vec<Tradeoff> = [0.0, 0.05, 0.1, 0.3, 0.5, 0.75]
        .into_iter()
        .map(Tradeoff::Finite)
        .collect();
    v.push(Tradeoff::Infinite);
    v
}

/// One referent optimized at every `α` of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSweepConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub feature: FeatureSpec,
    #[serde(default = "default_alpha_sweep")]
    pub alphas: Vec<Tradeoff>,
    #[serde(default = "default_capacity")]
    pub w_capacity: usize,
    #[serde(default = "default_threshold")]
    pub value_threshold: f64,
    #[serde(default = "default_regime_tol")]
    pub regime_tol: f64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

impl InstanceSweepConfig {
    pub fn new(feature: FeatureSpec) -> Self {
        Self {
            version: SCHEMA_VERSION,
            feature,
            alphas: default_alpha_sweep(),
            w_capacity: DEFAULT_CAPACITY,
            value_threshold: DEFAULT_VALUE_THRESHOLD,
            regime_tol: DEFAULT_REGIME_TOL,
            optimizer: OptimizerConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_version(self.version)?;
        self.feature.distribution().map_err(|e| at("feature.marginal", e))?;
        if self.alphas.is_empty() {
            return Err(config_error("alphas", "at least one alpha is required"));
        }
        for (i, a) in self.alphas.iter().enumerate() {
            a.validate("alpha").map_err(|e| at(&format!("alphas[{i}]"), e))?;
        }
        if self.w_capacity == 0 {
            return Err(config_error("w_capacity", "must be positive"));
        }
        self.optimizer.validate().map_err(|e| at("optimizer", e))
    }
}

/// Grid of lexicons over features, lexicon sizes and `β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSweepConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub features: Vec<FeatureSpec>,
    pub k: Vec<usize>,
    pub beta: Vec<Tradeoff>,
    #[serde(default = "default_capacity")]
    pub w_capacity: usize,
    #[serde(default = "default_tol")]
    pub theorem_tol: f64,
    #[serde(default)]
    pub system: SystemConfig,
}

impl SystemSweepConfig {
    pub fn validate(&self) -> Result<()> {
        check_version(self.version)?;
        if self.features.is_empty() || self.k.is_empty() || self.beta.is_empty() {
            return Err(config_error("features/k/beta", "grid dimensions must be non-empty"));
        }
        for (i, f) in self.features.iter().enumerate() {
            f.distribution()
                .map_err(|e| at(&format!("features[{i}].marginal"), e))?;
        }
        if let Some(i) = self.k.iter().position(|&k| k == 0) {
            return Err(config_error(&format!("k[{i}]"), "lexicon size must be positive"));
        }
        for (i, b) in self.beta.iter().enumerate() {
            b.validate("beta").map_err(|e| at(&format!("beta[{i}]"), e))?;
        }
        if self.system.alpha_schedule.is_some() || self.system.beta.is_some() {
            return Err(config_error(
                "system",
                "alpha_schedule and beta are set by the sweep grid",
            ));
        }
        if self.w_capacity == 0 {
            return Err(config_error("w_capacity", "must be positive"));
        }
        self.system.validate().map_err(|e| at("system", e))
    }

    /// Every `(feature, k, β)` cell in grid order.
    pub fn cells(&self) -> Vec<(usize, usize, Tradeoff)> {
        let mut out = Vec::new();
        for f in 0..self.features.len() {
            for &k in &self.k {
                for &b in &self.beta {
                    out.push((f, k, b));
                }
            }
        }
        out
    }
}

fn check_version(v: u32) -> Result<()> {
    if v != SCHEMA_VERSION {
        return Err(config_error(
            "version",
            &format!("unsupported schema version {v}, expected {SCHEMA_VERSION}"),
        ));
    }
    Ok(())
}

fn config_error(path: &str, message: &str) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.to_string(),
    }
}

fn at(path: &str, e: Error) -> Error {
    match e {
        Error::Config { .. } => e,
        other => config_error(path, &other.to_string()),
    }
}

/// Parses JSON reporting the schema path of the first failure.
pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        config_error(&path, &e.into_inner().to_string())
    })
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}

pub fn preset(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
        .ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            config_error(
                "preset",
                &format!("unknown preset {name:?}; available: {}", names.join(", ")),
            )
        })
}
