//! Run configuration: merged from an optional TOML file and command-line
//! flags, with flags winning. The merged configuration is echoed verbatim
//! into the run manifest.

use crate::dle::DleModel;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// "poisson" or "binomial"
    pub family: String,
    /// Trial count for the binomial family (may also come from the input CSV).
    pub m: Option<u32>,
    /// Loss index: 0 squared error, 1 scaled squared error.
    pub k: u8,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            family: "poisson".into(),
            m: None,
            k: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    /// Fixed bandwidth; when set, the grid collapses to this single value.
    pub fixed: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            lo: 10.0,
            hi: 100.0,
            points: 10,
            fixed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstraintsConfig {
    pub monotone: bool,
    pub epsilon: f64,
}

impl Default for ConstraintsConfig {
    fn default() -> Self {
        ConstraintsConfig {
            monotone: true,
            epsilon: crate::constraints::DEFAULT_POSITIVITY_MARGIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IoConfig {
    pub input: Option<String>,
    pub out_dir: Option<String>,
    /// Risk-table format: csv, text or json.
    pub format: String,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            input: None,
            out_dir: None,
            format: "csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub scenario: Option<String>,
    pub n: Vec<usize>,
    pub reps: usize,
    pub estimators: Vec<String>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            scenario: None,
            n: vec![500],
            reps: 50,
            estimators: vec!["neb".into(), "neb-or".into(), "robbins".into(), "bayes-oracle".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub constraints: ConstraintsConfig,
    pub io: IoConfig,
    pub sim: SimConfig,
    pub seed: u64,
    /// 0 lets the runtime pick its default parallelism.
    pub threads: usize,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.k > 1 {
            return Err(Error::Config(format!("k must be 0 or 1, got {}", self.model.k)));
        }
        match self.model.family.as_str() {
            "poisson" | "binomial" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown family '{other}'; valid: poisson, binomial"
                )))
            }
        }
        if self.grid.fixed.is_none() {
            if !(self.grid.lo < self.grid.hi) {
                return Err(Error::Config("grid requires lo < hi".into()));
            }
            if self.grid.points < 1 {
                return Err(Error::Config("grid needs at least one point".into()));
            }
        }
        if let Some(f) = self.grid.fixed {
            if !(f > 0.0) {
                return Err(Error::Config("fixed bandwidth must be positive".into()));
            }
        }
        if !(self.constraints.epsilon > 0.0) {
            return Err(Error::Config("positivity margin must be positive".into()));
        }
        Ok(())
    }

    /// The bandwidth grid this configuration asks for.
    pub fn lambda_grid(&self) -> Vec<f64> {
        match self.grid.fixed {
            Some(f) => vec![f],
            None => crate::dle::grid_vector(self.grid.lo, self.grid.hi, self.grid.points),
        }
    }

    /// The analysis model, given an `m` discovered in the input (if any).
    pub fn resolve_model(&self, m_from_data: Option<u32>) -> Result<DleModel> {
        match self.model.family.as_str() {
            "poisson" => Ok(DleModel::Poisson),
            "binomial" => {
                let m = self.model.m.or(m_from_data).ok_or_else(|| {
                    Error::Config("binomial family needs m (flag, config, or an m column)".into())
                })?;
                if let (Some(cfg_m), Some(data_m)) = (self.model.m, m_from_data) {
                    if cfg_m != data_m {
                        return Err(Error::data(format!(
                            "configured m={cfg_m} disagrees with input column m={data_m}"
                        )));
                    }
                }
                Ok(DleModel::Binomial { m })
            }
            other => Err(Error::Config(format!("unknown family '{other}'"))),
        }
    }

    pub fn constraint_flags(&self) -> crate::constraints::ConstraintFlags {
        crate::constraints::ConstraintFlags {
            monotone: self.constraints.monotone,
            epsilon: self.constraints.epsilon,
        }
    }
}
