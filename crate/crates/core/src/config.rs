//! Versioned run configuration shared by the command-line subcommands.
//!
//! Every section is optional and falls back to its defaults:
//!
//! ```json
//! { "version": 1,
//!   "render": { "resolution": 64, "num_images": 6, ... },
//!   "model":  { "encoder": {...}, "decoder": {...}, "target": "normals", "resolution": 64 },
//!   "train":  { "lr": 0.0001, "epochs": 60, "m": 256, ... },
//!   "eval":   { "k": null, "trials": 10, "m": 256, "seed": 0, "no_mask": false },
//!   "ablate": { "m": [32, 128, 512, 2048], "scale_invariant": [true, false], "global_branch": [true, false] } }
//! ```

use crate::eval::{AblateAxes, EvalOptions};
use crate::model::ModelConfig;
use crate::render::RenderConfig;
use crate::train::TrainConfig;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub render: RenderConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub ablate: AblateAxes,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            render: RenderConfig::default(),
            model: ModelConfig::toy(),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            ablate: AblateAxes::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Json { path: path.into(), source: e })?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!("config version {} is not supported (expected {CONFIG_VERSION})", cfg.version)));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound { Error::MissingFile(path.into()) } else { Error::io(path, e) }
        })?;
        Self::from_json(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        self.model.validate()?;
        self.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_default_and_version_is_checked() {
        let p = Path::new("cfg.json");
        let c = RunConfig::from_json(r#"{"version": 1, "train": {"epochs": 2}}"#, p).unwrap();
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.model, ModelConfig::toy());
        c.validate().unwrap();
        assert!(matches!(RunConfig::from_json(r#"{"version": 2}"#, p), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"trian": {}}"#, p), Err(Error::Json { .. })));
        let text = serde_json::to_string(&RunConfig::default()).unwrap();
        assert_eq!(RunConfig::from_json(&text, p).unwrap().model, ModelConfig::toy());
    }
}
