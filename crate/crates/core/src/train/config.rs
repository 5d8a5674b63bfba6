use crate::data::{AugmentationConfig, SyntheticWorldConfig};
use crate::discretize::{DiscretizationScheme, Mode};
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::model::{NetworkSpec, Variant};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Fractions of the total iteration budget given to the four stages:
/// regression warm-up, joint cascade, refinement and fusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub regression: f64,
    pub joint: f64,
    pub refinement: f64,
    pub fusion: f64,
}

impl Default for StagePlan {
    fn default() -> Self {
        StagePlan {
            regression: 0.1,
            joint: 0.7,
            refinement: 0.1,
            fusion: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub total_iters: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub stages: StagePlan,
    /// Skip refinement and fusion even for variants that have them.
    pub skip_post_stages: bool,
    pub loss: LossWeights,
    /// Record the loss curve every this many iterations (1 = every one).
    pub curve_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 1e-4,
            power: 0.9,
            momentum: 0.9,
            weight_decay: 5e-4,
            total_iters: 1000,
            batch_size: 1,
            seed: 0,
            stages: StagePlan::default(),
            skip_post_stages: false,
            loss: LossWeights::default(),
            curve_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let f = &self.stages;
        let parts = [f.regression, f.joint, f.refinement, f.fusion];
        if parts.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || parts.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(format!("stage fractions {parts:?} must be non-negative with a positive sum")));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr {} must be positive", self.base_lr)));
        }
        if !(self.power >= 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("power and weight_decay must be >= 0 and momentum in [0, 1)".into()));
        }
        if self.total_iters == 0 || self.batch_size == 0 || self.curve_every == 0 {
            return Err(Error::Config("total_iters, batch_size and curve_every must be positive".into()));
        }
        Ok(())
    }

    /// Iterations per stage for `variant`. Variants without a coarse branch
    /// fold the warm-up budget into the joint stage, so every variant gets
    /// the same number of cascade iterations.
    pub fn stage_iters(&self, variant: Variant) -> [usize; 4] {
        let f = &self.stages;
        let sum = f.regression + f.joint + f.refinement + f.fusion;
        let t = self.total_iters as f64;
        let r = (t * f.regression / sum).round() as usize;
        let j = (t * (f.regression + f.joint) / sum).round() as usize - r;
        let rf = (t * (f.regression + f.joint + f.refinement) / sum).round() as usize - r - j;
        let fu = self.total_iters - r - j - rf;
        let (r, j) = if variant.has_coarse_branch() { (r, j) } else { (0, r + j) };
        let (rf, fu) = if variant.has_post_refinement() && !self.skip_post_stages {
            (rf, fu)
        } else {
            (0, 0)
        };
        [r, j, rf, fu]
    }
}

/// Compact description from which the full layer plan is derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub variant: Variant,
    pub input_height: usize,
    pub input_width: usize,
    pub channel_divisor: usize,
    pub fusion_layers: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            variant: Variant::Rccn,
            input_height: 64,
            input_width: 64,
            channel_divisor: 8,
            fusion_layers: 3,
        }
    }
}

impl NetworkConfig {
    pub fn spec(&self, bins: usize) -> Result<NetworkSpec> {
        let mut spec = NetworkSpec::scaled(self.input_height, self.input_width, bins, self.channel_divisor, self.variant);
        spec.fusion_layers = self.fusion_layers;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

/// Everything one experiment needs, as a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub world: SyntheticWorldConfig,
    pub network: NetworkConfig,
    pub scheme: DiscretizationScheme,
    pub augmentation: AugmentationConfig,
    pub train: TrainConfig,
    pub paths: Paths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let world = SyntheticWorldConfig::default();
        ExperimentConfig {
            scheme: DiscretizationScheme {
                mode: Mode::SpacingIncreasing,
                min_depth: world.min_depth,
                max_depth: world.max_depth,
                bins: 32,
            },
            world,
            network: NetworkConfig::default(),
            augmentation: AugmentationConfig::default(),
            train: TrainConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.scheme.validate()?;
        self.network.spec(self.scheme.bins)?;
        self.train.validate()?;
        if self.augmentation.enabled {
            self.augmentation.validate()?;
            if self.augmentation.crop != [self.network.input_height, self.network.input_width] {
                return Err(Error::Config(format!(
                    "augmentation crop {:?} must equal the network input {}×{}",
                    self.augmentation.crop, self.network.input_height, self.network.input_width
                )));
            }
        }
        if self.world.height < self.network.input_height || self.world.width < self.network.input_width {
            return Err(Error::Config(format!(
                "rendered scenes ({}×{}) are smaller than the network input ({}×{})",
                self.world.height, self.world.width, self.network.input_height, self.network.input_width
            )));
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<NetworkSpec> {
        self.network.spec(self.scheme.bins)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
