//! Run configuration: a single JSON document; CLI flags override individual fields.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::episode::SamplingSpec;
use crate::error::{Error, Result};
use crate::metrics::SsimConfig;
use crate::overlay::ColorRamp;
use crate::supervision::{CommandEncoder, IdentityEncoder, LatentEncoder, DEFAULT_PROMPT_TEMPLATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Text,
    Trajectory,
    #[default]
    Both,
}

impl Branch {
    pub fn wants_text(self) -> bool {
        matches!(self, Branch::Text | Branch::Both)
    }

    pub fn wants_trajectory(self) -> bool {
        matches!(self, Branch::Trajectory | Branch::Both)
    }
}

impl std::str::FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Branch::Text),
            "trajectory" => Ok(Branch::Trajectory),
            "both" => Ok(Branch::Both),
            other => Err(Error::invalid(format!("unknown branch {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricFlags {
    pub fvd: bool,
    pub ssim: bool,
    pub mse: bool,
    pub success: bool,
}

impl Default for MetricFlags {
    fn default() -> Self {
        Self {
            fvd: true,
            ssim: true,
            mse: true,
            success: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncoderConfig {
    #[default]
    Identity,
    /// External program; see [`CommandEncoder`] for the `{input}`/`{output}` placeholders.
    Command {
        name: String,
        program: PathBuf,
        #[serde(default)]
        args: Vec<String>,
    },
}

impl EncoderConfig {
    pub fn build(&self) -> Box<dyn LatentEncoder> {
        match self {
            EncoderConfig::Identity => Box::new(IdentityEncoder),
            EncoderConfig::Command { name, program, args } => Box::new(CommandEncoder {
                name: name.clone(),
                program: program.clone(),
                args: args.clone(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_root: Option<PathBuf>,
    pub output_root: Option<PathBuf>,
    pub branch: Branch,
    pub sampling: SamplingSpec,
    pub ramp: ColorRamp,
    pub prompt_template: String,
    pub metrics: MetricFlags,
    pub ssim: SsimConfig,
    pub encoder: EncoderConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset_root: None,
            output_root: None,
            branch: Branch::default(),
            sampling: SamplingSpec::default(),
            ramp: ColorRamp::default(),
            prompt_template: DEFAULT_PROMPT_TEMPLATE.to_string(),
            metrics: MetricFlags::default(),
            ssim: SsimConfig::default(),
            encoder: EncoderConfig::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, "run config", e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        if self.sampling.target_count == 0 {
            return Err(Error::invalid("sampling.target_count must be at least 1"));
        }
        if let Some((h, w)) = self.sampling.resize_to {
            if h == 0 || w == 0 {
                return Err(Error::invalid("sampling.resize_to must be positive"));
            }
        }
        self.ramp.validate()?;
        if self.branch.wants_text() {
            crate::supervision::build_prompt("x", &self.prompt_template)?;
        }
        Ok(())
    }
}
