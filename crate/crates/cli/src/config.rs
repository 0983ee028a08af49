//! JSON configuration and report schemas.
//!
//! Configs are versioned and fail closed: unknown keys, a wrong version, or
//! cross-inconsistent dimensions are errors, so a config that parses is a
//! config that runs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use opl_core::bctrainer::BcConfig;
use opl_core::error::{Error, Result};
use opl_core::evalharness::EvalReport;
use opl_core::expertfilter::{FilterConfig, IterationStats};
use opl_core::symaug::SymmetrySchema;
use opl_core::synthenv::{EnvParams, SynthEnv};

/// Schema version accepted by this binary.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelinePaths {
    /// Where generated and filtered datasets are written.
    pub data_dir: PathBuf,
    /// Where model checkpoints are written.
    pub model_dir: PathBuf,
    /// Where evaluation reports and tables are written.
    pub report_dir: PathBuf,
}

/// Everything a full pipeline run needs. One top-level seed is split into
/// named streams (gen/filter/train/eval) so stages stay independently
/// reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub seed: u64,
    pub env: EnvParams,
    pub filter: FilterConfig,
    pub bc: BcConfig,
    pub schema: SymmetrySchema,
    pub paths: PipelinePaths,
}

impl PipelineConfig {
    /// Defaults rooted at `base_dir`, with the symmetry schema derived from
    /// the environment so the two cannot drift apart.
    pub fn defaults(seed: u64, base_dir: &Path) -> Result<PipelineConfig> {
        let env = EnvParams::default();
        let schema = SynthEnv::new(env)?.symmetry_schema();
        Ok(PipelineConfig {
            version: CONFIG_VERSION,
            seed,
            env,
            filter: FilterConfig::default(),
            bc: BcConfig::scaled_to(1),
            schema,
            paths: PipelinePaths {
                data_dir: base_dir.join("data"),
                model_dir: base_dir.join("models"),
                report_dir: base_dir.join("reports"),
            },
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: PipelineConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Domain(format!(
                "config version {} is not supported (this binary expects {CONFIG_VERSION})",
                self.version
            )));
        }
        self.env.validate()?;
        self.filter.validate()?;
        self.bc.validate()?;
        self.schema.validate()?;
        let env = SynthEnv::new(self.env)?;
        if self.schema.state.dim != env.state_dim()
            || self.schema.action.dim != env.action_dim()
            || self.schema.n_fold != self.env.n_fingers
        {
            return Err(Error::Schema(format!(
                "schema ({}-fold, state {}, action {}) does not match the environment \
                 ({}-fold, state {}, action {})",
                self.schema.n_fold,
                self.schema.state.dim,
                self.schema.action.dim,
                self.env.n_fingers,
                env.state_dim(),
                env.action_dim()
            )));
        }
        Ok(())
    }
}

/// Sidecar written next to every generated `.opld`: the exact environment
/// and its symmetry layout, so downstream stages need no reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenMeta {
    pub env: EnvParams,
    pub schema: SymmetrySchema,
}

impl GenMeta {
    pub fn load(path: impl AsRef<Path>) -> Result<GenMeta> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Sidecar path for a dataset: `x.opld` -> `x.meta.json`.
pub fn meta_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("meta.json")
}

/// JSON report written by the `filter` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub selected: Vec<u64>,
    pub seed_ids: Vec<u64>,
    pub converged: bool,
    pub iterations: Vec<IterationStats>,
    /// (episode id, final confidence), in dataset order.
    pub confidences: Vec<(u64, f64)>,
}

impl FilterReport {
    pub fn load(path: impl AsRef<Path>) -> Result<FilterReport> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// One trained-and-evaluated policy inside a `repro` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproRun {
    pub train_seed: u64,
    pub eval: EvalReport,
}

/// Full record of a `repro --variant` invocation; everything needed to
/// audit the run, nothing wall-clock dependent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproReport {
    pub variant: String,
    pub seed: u64,
    pub n_episodes: usize,
    pub eval_episodes: usize,
    pub filter_selected: Vec<u64>,
    pub filter_converged: bool,
    pub filter_iterations: usize,
    pub runs: Vec<ReproRun>,
}

impl ReproReport {
    pub fn load(path: impl AsRef<Path>) -> Result<ReproReport> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
