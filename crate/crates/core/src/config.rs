//! Experiment configuration: strict TOML (or a previously written
//! `manifest.json`), validated before any computation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{ModelSpec, NetworkChoice, RunSpec};
use crate::grid::TimeGrid;
use crate::kernels::{Kernel, TransferFunction};
use crate::simulator::{Backend, Scaling};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Lln,
    Clt,
    Compensated,
    Critical,
    Independence,
    Backends,
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lln" => ExperimentKind::Lln,
            "clt" => ExperimentKind::Clt,
            "compensated" => ExperimentKind::Compensated,
            "critical" => ExperimentKind::Critical,
            "independence" => ExperimentKind::Independence,
            "backends" => ExperimentKind::Backends,
            other => return Err(Error::param("experiment", format!("unknown experiment {other:?}"))),
        })
    }
}

/// One network size or a list of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sizes {
    One(usize),
    Many(Vec<usize>),
}

impl Sizes {
    pub fn to_vec(&self) -> Vec<usize> {
        match self {
            Sizes::One(n) => vec![*n],
            Sizes::Many(ns) => ns.clone(),
        }
    }

    /// The largest size, used by single-N experiments.
    pub fn largest(&self) -> usize {
        self.to_vec().into_iter().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub n: Sizes,
    pub p: f64,
    pub q: f64,
    pub kernel: Kernel,
    pub transfer: TransferFunction,
    /// Derived from `p` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<Scaling>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub horizon: f64,
    /// Grid step; rounded so the grid ends exactly at the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervals: Option<usize>,
    #[serde(default = "one")]
    pub replicates: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub backend: Backend,
    /// Tracked vertices (fluctuation paths, recorded inputs).
    #[serde(default = "two")]
    pub tracked: usize,
    /// Vertex count of the independence experiment.
    #[serde(default = "five")]
    pub vertices: usize,
    #[serde(default)]
    pub network: NetworkChoice,
    #[serde(default = "limit_samples")]
    pub limit_samples: usize,
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn five() -> usize {
    5
}
fn limit_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub model: ModelBlock,
    pub run: RunBlock,
    /// Replacement tolerances keyed by criterion id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tolerances: BTreeMap<String, f64>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config {
            path: "<document>".into(),
            message: format!("{}: {}", origin.display(), e.message()),
        })?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().message().to_string(),
        })?;
        Ok(cfg)
    }

    /// Reads TOML, or the `config` entry of a `manifest.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            let value: serde_json::Value = serde_json::from_str(&text)?;
            let inner = value.get("config").cloned().ok_or_else(|| Error::Config {
                path: "config".into(),
                message: "manifest has no config entry".into(),
            })?;
            serde_path_to_error::deserialize(inner).map_err(|e| Error::Config {
                path: format!("config.{}", e.path()),
                message: e.inner().to_string(),
            })?
        } else {
            Self::from_toml_str(&text, path)?
        };
        Ok(cfg)
    }

    /// Schema-level checks and regime consistency.
    pub fn validate(&self) -> Result<()> {
        let model = self.model_spec();
        model.validate().map_err(|e| Error::Config {
            path: "model".into(),
            message: e.to_string(),
        })?;
        let ns = self.model.n.to_vec();
        if ns.is_empty() || ns.contains(&0) {
            return Err(Error::Config {
                path: "model.n".into(),
                message: "network sizes must be positive".into(),
            });
        }
        if self.run.replicates == 0 {
            return Err(Error::Config {
                path: "run.replicates".into(),
                message: "must be at least 1".into(),
            });
        }
        if self.run.step.is_some() && self.run.intervals.is_some() {
            return Err(Error::Config {
                path: "run".into(),
                message: "give either step or intervals, not both".into(),
            });
        }
        self.grid().map_err(|e| Error::Config {
            path: "run.horizon".into(),
            message: e.to_string(),
        })?;
        let critical_p = self.model.p == 0.5;
        if let Some(scaling) = self.model.scaling {
            if (scaling == Scaling::Critical) != critical_p {
                return Err(Error::Config {
                    path: "model.scaling".into(),
                    message: format!("scaling {scaling:?} is inconsistent with p = {}", self.model.p),
                });
            }
        }
        match self.experiment {
            Some(ExperimentKind::Critical) if !critical_p => Err(Error::Config {
                path: "experiment".into(),
                message: "the critical experiment needs p = 0.5".into(),
            }),
            Some(ExperimentKind::Lln | ExperimentKind::Clt | ExperimentKind::Compensated | ExperimentKind::Independence)
                if critical_p =>
            {
                Err(Error::Config {
                    path: "model.p".into(),
                    message: "p = 0.5 is the critical regime; select experiment = \"critical\"".into(),
                })
            }
            _ => Ok(()),
        }
    }

    pub fn scaling(&self) -> Scaling {
        self.model.scaling.unwrap_or(if self.model.p == 0.5 {
            Scaling::Critical
        } else {
            Scaling::MeanField
        })
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        match (self.run.step, self.run.intervals) {
            (Some(step), _) => TimeGrid::new(self.run.horizon, step),
            (None, Some(m)) => TimeGrid::with_intervals(self.run.horizon, m),
            (None, None) => TimeGrid::default_for(self.run.horizon),
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            p: self.model.p,
            q: self.model.q,
            kernel: self.model.kernel.clone(),
            transfer: self.model.transfer.clone(),
        }
    }

    pub fn run_spec(&self) -> Result<RunSpec> {
        let grid = self.grid()?;
        Ok(RunSpec {
            horizon: grid.horizon(),
            intervals: grid.intervals(),
            replicates: self.run.replicates,
            master_seed: self.run.master_seed,
            backend: self.run.backend,
            limit_samples: self.run.limit_samples,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
experiment = "lln"

[model]
n = [100, 400]
p = 0.8
q = 0.5
kernel = { exponential = { lambda = 1.0 } }
transfer = { arctan = {} }

[run]
horizon = 10.0
replicates = 5
master_seed = 7
"#;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml_str(text, Path::new("test.toml"))
    }

    #[test]
    fn example_parses_and_validates() {
        let cfg = parse(EXAMPLE).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.model.n.to_vec(), vec![100, 400]);
        assert_eq!(cfg.scaling(), Scaling::MeanField);
        assert_eq!(cfg.grid().unwrap().intervals(), 2048);
    }

    #[test]
    fn unknown_key_reports_its_path() {
        let text = EXAMPLE.replace("q = 0.5", "q = 0.5\nqq = 0.1");
        match parse(&text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "model.qq"),
            other => panic!("{other:?}"),
        }
        let text = EXAMPLE.replace("lambda = 1.0", "lamda = 1.0");
        match parse(&text) {
            Err(Error::Config { path, .. }) => assert!(path.starts_with("model.kernel"), "{path}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_type_reports_its_path() {
        let text = EXAMPLE.replace("replicates = 5", "replicates = \"five\"");
        match parse(&text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "run.replicates"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn regime_mismatch_is_a_config_error() {
        let cfg = parse(&EXAMPLE.replace("p = 0.8", "p = 0.5")).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
        let cfg = parse(&EXAMPLE.replace("\"lln\"", "\"critical\"")).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
        let cfg = parse(&EXAMPLE.replace("q = 0.5", "q = 0.5\nscaling = \"critical\"")).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn out_of_range_probability_is_rejected() {
        let cfg = parse(&EXAMPLE.replace("q = 0.5", "q = 1.5")).unwrap();
        assert!(cfg.validate().is_err());
    }
}
