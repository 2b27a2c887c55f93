use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{ModelConfig, Variant};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::train::PpoConfig;

/// Model section of a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// `nocom`, `rand-ucomm`, `rand-scomm`, `ucomm`, `scomm` or `oraclemap`.
    pub variant: String,
    /// Layer sizes: `desk`, `paper` or `tiny`.
    #[serde(default = "default_preset")]
    pub preset: String,
    /// U-Comm message length L.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message_len: Option<usize>,
    /// S-Comm vocabulary size K.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<usize>,
}

fn default_preset() -> String {
    "desk".into()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
}

/// Everything a training run needs, read from one JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; overrides `ppo.seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub env: EnvConfig,
    pub model: ModelSection,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub data: DataSection,
}

fn env_problems(env: &EnvConfig) -> Vec<String> {
    let mut out = Vec::new();
    if env.view_size % 2 == 0 {
        out.push(format!("env.view_size must be odd, got {}", env.view_size));
    }
    if env.crop % 2 == 0 {
        out.push(format!("env.crop must be odd, got {}", env.crop));
    }
    if env.width < 8 || env.height < 8 {
        out.push(format!("env.width and env.height must be at least 8, got {}x{}", env.width, env.height));
    }
    if env.categories == 0 {
        out.push("env.categories must be positive".into());
    }
    if env.goals == 0 || env.goals > env.categories {
        out.push(format!("env.goals must lie in 1..=categories ({}), got {}", env.categories, env.goals));
    }
    if !(env.fov_deg > 0.0 && env.fov_deg <= 360.0) {
        out.push(format!("env.fov_deg must lie in (0, 360], got {}", env.fov_deg));
    }
    for (name, v) in [
        ("cell_size", env.cell_size),
        ("forward_step", env.forward_step),
        ("found_threshold", env.found_threshold),
        ("view_range", env.view_range),
    ] {
        if !(v.is_finite() && v > 0.0) {
            out.push(format!("env.{name} must be positive, got {v}"));
        }
    }
    if !(env.min_sep.is_finite() && env.min_sep >= 0.0) {
        out.push(format!("env.min_sep must be non-negative, got {}", env.min_sep));
    }
    if env.budget == 0 {
        out.push("env.budget must be positive".into());
    }
    out
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("run configuration: {e}")))
    }

    /// Reads and validates a configuration file. Relative dataset and output
    /// paths are taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.validate()?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.train, &mut cfg.data.val, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Every violated constraint across all sections.
    pub fn problems(&self) -> Vec<String> {
        let mut out = env_problems(&self.env);
        let variant = Variant::parse(&self.model.variant);
        if variant.is_err() {
            out.push(format!(
                "model.variant `{}` is not one of nocom, rand-ucomm, rand-scomm, ucomm, scomm, oraclemap",
                self.model.variant
            ));
        }
        if !["desk", "paper", "tiny"].contains(&self.model.preset.as_str()) {
            out.push(format!("model.preset `{}` is not one of desk, paper, tiny", self.model.preset));
        }
        if self.model.message_len == Some(0) {
            out.push("model.message_len must be positive".into());
        }
        if let Some(k) = self.model.vocab {
            if k != 2 && k != 3 {
                out.push(format!("model.vocab must be 2 or 3, got {k}"));
            }
        }
        out.extend(self.ppo.problems());
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let variant = Variant::parse(&self.model.variant)?;
        let mut m = ModelConfig::preset(&self.model.preset, variant)?;
        if let Some(l) = self.model.message_len {
            m.message_len = l;
        }
        if let Some(k) = self.model.vocab {
            m.vocab = k;
        }
        m.validate()?;
        Ok(m)
    }

    /// PPO settings with the master seed applied.
    pub fn ppo_config(&self, seed: Option<u64>) -> PpoConfig {
        let mut p = self.ppo.clone();
        if let Some(s) = seed.or(self.seed) {
            p.seed = s;
        }
        p
    }
}
