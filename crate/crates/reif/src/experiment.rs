//! TOML experiment documents.
//!
//! ```toml
//! name = "demo"
//! output_dir = "runs/demo"        # relative paths resolve against this file
//! # dataset = "data.jsonl"        # load instead of generating from [data]
//!
//! [data]                          # synthetic generator settings
//! seed = 0
//! class_separation = 2.0
//!
//! [validation]                    # validation-split heuristic
//! target_fraction = 0.1
//!
//! [run]                           # base RunConfig shared by every grid cell
//! epochs = 30
//! validation_sum = true
//!
//! [grid]
//! strategies = ["REIF-P-BiB", "FULL"]
//! ratios = [0.1]                  # ignored by FULL / ONE / AVE
//! seeds = [0, 1, 2]
//!
//! [influence]                     # final-model influence report
//! solver = "auto"
//!
//! [report]
//! patn = [100, 200, 300]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use reif_core::data::{NoiseSpec, ValidationParams};
use reif_core::influence::{InverseHvpMethod, DEFAULT_EXACT_MAX_PARAMS};
use reif_core::trainer::{RunConfig, Strategy};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    /// Exact when the parameter count is at most `max_params`, else LiSSA.
    Auto,
    Exact,
    Lissa,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InfluenceSettings {
    pub solver: Solver,
    pub damping: f64,
    pub max_params: usize,
}

impl Default for InfluenceSettings {
    fn default() -> Self {
        InfluenceSettings {
            solver: Solver::Auto,
            damping: 0.01,
            max_params: DEFAULT_EXACT_MAX_PARAMS,
        }
    }
}

impl InfluenceSettings {
    /// LiSSA runs with the run's parameters and the damping set here.
    pub fn method(&self, num_params: usize, run: &RunConfig) -> InverseHvpMethod {
        let exact = match self.solver {
            Solver::Auto => num_params <= self.max_params,
            Solver::Exact => true,
            Solver::Lissa => false,
        };
        if exact {
            InverseHvpMethod::Exact { damping: self.damping, max_params: self.max_params.max(num_params) }
        } else {
            InverseHvpMethod::Lissa(reif_core::influence::LissaParams { damping: self.damping, ..run.lissa })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub strategies: Vec<Strategy>,
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            strategies: vec![Strategy::ReifPBib, Strategy::Full],
            ratios: vec![0.1],
            seeds: vec![0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSettings {
    pub patn: Vec<usize>,
    pub noise_report: bool,
    pub selections: bool,
}

impl Default for ReportSettings {
    fn default() -> Self {
        ReportSettings {
            patn: vec![100, 200, 300],
            noise_report: true,
            selections: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub data: NoiseSpec,
    #[serde(default)]
    pub validation: ValidationParams,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub influence: InfluenceSettings,
    #[serde(default)]
    pub report: ReportSettings,
}

fn default_name() -> String {
    "experiment".into()
}

/// One cell of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub run_id: String,
    pub strategy: Strategy,
    /// Absent for strategies that do not subsample.
    pub ratio: Option<f64>,
    pub seed: u64,
    pub config: RunConfig,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads and validates `path`; relative paths inside resolve against
    /// its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        spec.output_dir = base.join(&spec.output_dir);
        spec.dataset = spec.dataset.map(|d| base.join(d));
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.strategies.is_empty() || g.seeds.is_empty() {
            return Err(Error::Config("grid needs at least one strategy and one seed".into()));
        }
        if g.strategies.iter().any(|s| !s.is_baseline()) && g.ratios.is_empty() {
            return Err(Error::Config("grid.ratios is empty but a REIF strategy is listed".into()));
        }
        if let Some(d) = &self.dataset {
            if !d.is_file() {
                return Err(Error::Config(format!("dataset {} does not exist", d.display())));
            }
        } else {
            self.data.validate()?;
        }
        if !(self.validation.target_fraction > 0.0 && self.validation.target_fraction <= 0.5) {
            return Err(Error::Config("validation.target_fraction must be in (0, 0.5]".into()));
        }
        if self.report.patn.contains(&0) {
            return Err(Error::Config("report.patn entries must be at least 1".into()));
        }
        for run in self.expand() {
            run.config.validate().map_err(|e| Error::Config(format!("{}: {e}", run.run_id)))?;
        }
        Ok(())
    }

    /// Grid cells in a fixed order: strategy, then ratio, then seed.
    pub fn expand(&self) -> Vec<RunSpec> {
        let mut out = Vec::new();
        for &strategy in &self.grid.strategies {
            let ratios: Vec<Option<f64>> = if strategy.is_baseline() {
                vec![None]
            } else {
                self.grid.ratios.iter().map(|&r| Some(r)).collect()
            };
            for ratio in ratios {
                for &seed in &self.grid.seeds {
                    let mut config = RunConfig { strategy, seed, ..self.run };
                    if let Some(r) = ratio {
                        config.sampler.ratio = r;
                    }
                    config.record_selections = self.report.selections;
                    let run_id = match ratio {
                        Some(r) => format!("{strategy}_r{r}_s{seed}"),
                        None => format!("{strategy}_s{seed}"),
                    };
                    out.push(RunSpec { run_id, strategy, ratio, seed, config });
                }
            }
        }
        out
    }
}
