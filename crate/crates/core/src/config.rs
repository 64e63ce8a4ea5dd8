//! Run configuration: one TOML document covering corpus synthesis, training
//! and restoration. Every field has a default, unknown keys are rejected.
//!
//! ```toml
//! [corpus]
//! n_clips = 200
//! seed = 0
//!
//! [train]
//! steps = 6000
//! hidden = 256
//!
//! [train.analysis.dsc]
//! q = 0.01
//!
//! [train.degradation]
//! seed = 7
//!
//! [restore]
//! w = 1.0
//! steps = 1
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cfm::TrainConfig;
use crate::corpus::CorpusConfig;
use crate::error::{Error, Result};
use crate::pipeline::{EvalConfig, RestoreRequest};

/// Environment variable naming the config file used when none is given.
pub const CONFIG_ENV: &str = "CONTOURFLOW_CONFIG";
/// File name of the resolved config written next to run outputs.
pub const RESOLVED_FILE: &str = "config.resolved.toml";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub train: TrainConfig,
    pub restore: RestoreRequest,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.train.validate()?;
        self.eval.validate()
    }

    /// Reads `path`, else the file named by [`CONFIG_ENV`], else defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let from_env = std::env::var_os(CONFIG_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from);
        match path.map(Path::to_path_buf).or(from_env) {
            Some(p) => {
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
            None => Ok(Self::default()),
        }
    }

    /// Writes the resolved config into `dir` and returns the file path.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(RESOLVED_FILE);
        std::fs::write(&path, self.to_toml()?)?;
        Ok(path)
    }
}
