//! The TOML run configuration shared by every subcommand.

use std::path::Path;

use serde::{Deserialize, Serialize};
use vinecast::baselines::{GbdtParams, LogisticParams};
use vinecast::eval::{BenchmarkConfig, TargetMode};
use vinecast::geomap::Colormap;
use vinecast::pfn::{PfnConfig, TrainOptions};
use vinecast::prior::PriorConfig;

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub prior: PriorConfig,
    pub pfn: PfnSection,
    pub preprocess: PreprocessSection,
    pub baselines: BaselinesSection,
    pub eval: EvalSection,
    pub map: MapSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PfnSection {
    pub architecture: PfnConfig,
    pub training: TrainOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    /// Preprocessing variants averaged by `predict` and `map`.
    pub ensembles: usize,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self { ensembles: 32 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselinesSection {
    pub gbdt: GbdtParams,
    pub logistic: LogisticParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub seeds: u64,
    pub train_fraction: f64,
    /// Features kept by SHAP ranking; 0 keeps all.
    pub top_k: usize,
    pub roc_seed: u64,
    /// Target mode of the SHAP ranking model.
    pub shap_mode: TargetMode,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { seeds: 40, train_fraction: 0.76, top_k: 25, roc_seed: 0, shap_mode: TargetMode::Imbalance }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapSection {
    pub low_color: [u8; 3],
    pub high_color: [u8; 3],
}

impl Default for MapSection {
    fn default() -> Self {
        let c = Colormap::default();
        Self { low_color: c.low, high_color: c.high }
    }
}

impl MapSection {
    pub fn colormap(&self) -> Colormap {
        Colormap { low: self.low_color, high: self.high_color }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
                Self::parse(&text).map_err(|e| match e {
                    CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
        }
    }

    pub fn benchmark(&self) -> BenchmarkConfig {
        BenchmarkConfig {
            n_seeds: self.eval.seeds,
            train_fraction: self.eval.train_fraction,
            top_k: (self.eval.top_k > 0).then_some(self.eval.top_k),
            shap_mode: self.eval.shap_mode,
            roc_seed: self.eval.roc_seed,
            gbdt: self.baselines.gbdt.clone(),
            logistic: self.baselines.logistic.clone(),
        }
    }
}
