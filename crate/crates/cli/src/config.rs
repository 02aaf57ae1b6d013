//! Pipeline configuration file (TOML).

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use liftcore::matching::RegisterOptions;
use liftcore::synth::DistortionSpec;
use liftcore::train::{EvalOptions, TrainConfig};
use liftcore::trajectory::Step;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub plan: PlanSection,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub matching: MatchingSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            plan: PlanSection::default(),
            synth: SynthSection::default(),
            matching: MatchingSection::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSection {
    /// Frames per clip.
    pub l: usize,
    /// Number of first-stage directions, 2 or 4.
    pub directions: usize,
    pub translation: f64,
    pub rotation: f64,
}

impl Default for PlanSection {
    fn default() -> Self {
        Self {
            l: 16,
            directions: 4,
            translation: 0.1,
            rotation: 0.0,
        }
    }
}

impl PlanSection {
    pub fn step(&self) -> Step {
        Step {
            translation: self.translation,
            rotation: self.rotation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub resolution: usize,
    /// Focal length in pixels; `None` means 0.9 × resolution.
    pub focal: Option<f64>,
    pub distortion: DistortionSpec,
    pub eval_views: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            resolution: 128,
            focal: None,
            distortion: DistortionSpec::default(),
            eval_views: 4,
        }
    }
}

impl SynthSection {
    pub fn focal(&self) -> f64 {
        self.focal.unwrap_or(0.9 * self.resolution as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingSection {
    /// Loop-closing edges added to the temporal tree.
    pub extra_edges: usize,
    pub refine_iters: usize,
    pub refine_step: f64,
    pub samples_per_edge: usize,
    /// Skip focal estimation and use this value.
    pub focal: Option<f64>,
}

impl Default for MatchingSection {
    fn default() -> Self {
        let r = RegisterOptions::default();
        Self {
            extra_edges: 0,
            refine_iters: r.refine_iters,
            refine_step: r.step,
            samples_per_edge: r.samples_per_edge,
            focal: None,
        }
    }
}

impl MatchingSection {
    pub fn register_options(&self) -> RegisterOptions {
        RegisterOptions {
            refine_iters: self.refine_iters,
            step: self.refine_step,
            samples_per_edge: self.samples_per_edge,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Pose refinement steps per view; 0 evaluates at the given pose.
    pub steps: usize,
    pub lr_rotation: f64,
    pub lr_translation: f64,
    pub final_lr_factor: f64,
    pub patience: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let o = EvalOptions::default();
        Self {
            steps: o.steps,
            lr_rotation: o.lr_rotation,
            lr_translation: o.lr_translation,
            final_lr_factor: o.final_lr_factor,
            patience: o.patience,
        }
    }
}

impl EvalSection {
    pub fn options(&self, extent: f64, background: [f64; 3]) -> EvalOptions {
        EvalOptions {
            steps: self.steps,
            lr_rotation: self.lr_rotation,
            lr_translation: self.lr_translation,
            extent,
            final_lr_factor: self.final_lr_factor,
            patience: self.patience,
            background,
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        // check the version before the rest so old files get a clear message
        let raw: toml::Table = toml::from_str(text)?;
        match raw.get("schema_version") {
            None => bail!("schema_version missing"),
            Some(toml::Value::Integer(v)) if *v == SCHEMA_VERSION as i64 => {}
            Some(v) => bail!("unsupported schema_version {v}, expected {SCHEMA_VERSION}"),
        }
        let cfg: PipelineConfig = toml::from_str(text)?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("config {}", p.display()))
            }
        }
    }
}
