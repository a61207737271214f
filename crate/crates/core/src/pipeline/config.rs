use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curator::CuratorConfig;
use crate::env::{EnvConfig, ParamRanges};
use crate::error::{Error, Result};
use crate::geometry::PerturbationRange;
use crate::relabel::CemConfig;
use crate::sampler::SamplerConfig;

/// Full run configuration. Every section and field has a default, so an empty
/// file is a valid config.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub env: EnvConfig,
    pub demo: DemoConfig,
    pub run: RunConfig,
    pub sampler: SamplerConfig,
    pub curator: CuratorConfig,
    pub relabel: CemConfig,
    pub export: ExportConfig,
    pub randomization: RandomizationConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    /// JSON demo file (`object0` plus `end_effectors` pose sequences); the
    /// environment's scripted demo when unset.
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Outer iterations per variant, `K`.
    pub iterations: usize,
    /// Spatial variants, `N_var`.
    pub variants: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            iterations: 5,
            variants: 4,
            out: PathBuf::from("pgdg-out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    /// Action chunk length `k` of standard records.
    pub chunk_len: usize,
}

impl Default for ExportConfig {
    fn default() -> Self {
        ExportConfig { chunk_len: 30 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationConfig {
    /// Per-axis object translation bound in meters.
    pub translation: [f64; 3],
    /// Object yaw bound in radians.
    pub yaw: f64,
    pub mass: [f64; 2],
    pub friction: [f64; 2],
    /// Steps of the interpolated approach from the reset pose to the demo start.
    pub blend_steps: usize,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        let p = ParamRanges::default();
        RandomizationConfig {
            translation: [0.08, 0.08, 0.0],
            yaw: 0.3,
            mass: p.mass,
            friction: p.friction,
            blend_steps: 10,
        }
    }
}

impl RandomizationConfig {
    pub fn perturbation(&self) -> PerturbationRange {
        PerturbationRange {
            translation: self.translation,
            yaw: self.yaw,
        }
    }

    pub fn param_ranges(&self) -> ParamRanges {
        ParamRanges {
            mass: self.mass,
            friction: self.friction,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.iterations == 0 || self.run.variants == 0 {
            return Err(Error::Config("run.iterations and run.variants must be at least 1".into()));
        }
        self.sampler.validate()?;
        self.curator.validate()?;
        self.relabel.validate()?;
        let env = self.env.build()?;
        let horizon = env.horizon();
        if self.export.chunk_len == 0 || self.export.chunk_len > horizon {
            return Err(Error::Config(format!("export.chunk_len must be in 1..={horizon}")));
        }
        if self.relabel.horizon > horizon {
            return Err(Error::Config(format!("relabel.horizon must be at most {horizon}")));
        }
        let r = &self.randomization;
        if r.blend_steps == 0 || r.blend_steps >= horizon {
            return Err(Error::Config(format!("randomization.blend_steps must be in 1..{horizon}")));
        }
        if r.translation.iter().chain([&r.yaw]).any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("randomization bounds must be non-negative".into()));
        }
        for (name, range) in [("mass", r.mass), ("friction", r.friction)] {
            if !(range[0] <= range[1]) {
                return Err(Error::Config(format!("randomization.{name} must be an interval [lo, hi]")));
            }
        }
        let t_tilde = self.curator.t_tilde.unwrap_or(horizon);
        if self.curator.k_dct >= t_tilde {
            return Err(Error::Config(format!("curator.k_dct must be below T̃ = {t_tilde}")));
        }
        if self.sampler.control_points > horizon {
            return Err(Error::Config(format!("sampler.control_points must be at most {horizon}")));
        }
        Ok(())
    }
}
