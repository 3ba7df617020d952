//! Versioned JSON run configuration. Relative paths resolve against the
//! config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::generate::{gen_business_data, gen_sim_data, BusinessParams, CategoryWeights};
use crate::analysis::presets::{ThresholdPreset, TopCodePreset};
use crate::analysis::sweep::SweepConfig;
use crate::analysis::theory::log_space;
use crate::error::{Error, Result};
use crate::splitting::ThresholdScheme;
use crate::table::{load_csv, parse_schema_spec, Table};
use crate::workload::{PartitionSelectionStage, Query, Workload};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    Csv {
        path: PathBuf,
        /// `name:conditional,name:measure,...`
        schema: String,
    },
    Sim {
        n: usize,
        seed: u64,
        #[serde(default)]
        weights: CategoryWeights,
    },
    Business {
        n: usize,
        seed: u64,
        #[serde(default)]
        params: BusinessParams,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdsConfig {
    Preset { preset: ThresholdPreset },
    Scheme(ThresholdScheme),
}

impl ThresholdsConfig {
    pub fn scheme(&self) -> ThresholdScheme {
        match self {
            ThresholdsConfig::Preset { preset } => preset.thresholds().into(),
            ThresholdsConfig::Scheme(s) => s.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopCodesConfig {
    Preset { preset: TopCodePreset },
    Explicit(BTreeMap<String, f64>),
}

impl TopCodesConfig {
    pub fn top_codes(&self) -> BTreeMap<String, f64> {
        match self {
            TopCodesConfig::Preset { preset } => preset.top_codes(),
            TopCodesConfig::Explicit(m) => m.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeltaGrid {
    LogSpaced { from: f64, to: f64, count: usize },
    List(Vec<f64>),
}

impl DeltaGrid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            DeltaGrid::LogSpaced { from, to, count } => log_space(*from, *to, *count),
            DeltaGrid::List(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MseTheoryConfig {
    pub n: usize,
    pub alphas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub deltas: DeltaGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FfuConfig {
    pub delta_targets: Vec<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_gamma() -> f64 {
    0.95
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub input: Option<InputSpec>,
    #[serde(default)]
    pub thresholds: Option<ThresholdsConfig>,
    #[serde(default)]
    pub top_codes: Option<TopCodesConfig>,
    #[serde(default)]
    pub partition_selection: Option<PartitionSelectionStage>,
    #[serde(default)]
    pub queries: Vec<Query>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub mse_theory: Option<MseTheoryConfig>,
    #[serde(default)]
    pub ffu: Option<FfuConfig>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, base)
    }

    fn section<'a, T>(&self, value: &'a Option<T>, name: &str) -> Result<&'a T> {
        value
            .as_ref()
            .ok_or_else(|| Error::Config(format!("missing `{name}` section")))
    }

    pub fn table(&self) -> Result<Table> {
        match self.section(&self.input, "input")? {
            InputSpec::Csv { path, schema } => {
                let path = if path.is_absolute() {
                    path.clone()
                } else {
                    self.base_dir.join(path)
                };
                load_csv(path, parse_schema_spec(schema)?)
            }
            InputSpec::Sim { n, seed, weights } => gen_sim_data(*n, *seed, weights),
            InputSpec::Business { n, seed, params } => gen_business_data(*n, *seed, params),
        }
    }

    pub fn thresholds(&self) -> Result<ThresholdScheme> {
        Ok(self.section(&self.thresholds, "thresholds")?.scheme())
    }

    pub fn workload(&self) -> Result<Workload> {
        Ok(Workload {
            queries: self.queries.clone(),
            thresholds: self.thresholds()?,
            partition_selection: self.partition_selection.clone(),
            top_codes: self
                .top_codes
                .as_ref()
                .map(TopCodesConfig::top_codes)
                .unwrap_or_default(),
        })
    }

    pub fn sweep(&self) -> Result<&SweepConfig> {
        self.section(&self.sweep, "sweep")
    }

    pub fn mse_theory(&self) -> Result<&MseTheoryConfig> {
        self.section(&self.mse_theory, "mse_theory")
    }

    pub fn ffu(&self) -> Result<&FfuConfig> {
        self.section(&self.ffu, "ffu")
    }
}
