//! Next-step surrogate architectures and their checkpoint container.

mod checkpoint;
pub mod fno;
mod params;
pub mod vit;

pub use checkpoint::{Checkpoint, Provenance, PDTC_MAGIC, PDTC_VERSION};
pub use fno::FnoConfig;
pub use params::Params;
pub use vit::ViTConfig;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::rng;
use crate::tensor::Tensor;

/// Architecture plus its hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "kebab-case")]
pub enum ModelConfig {
    Vit(ViTConfig),
    Fno(FnoConfig),
}

impl ModelConfig {
    pub fn arch(&self) -> &'static str {
        match self {
            ModelConfig::Vit(_) => "vit",
            ModelConfig::Fno(_) => "fno",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Vit(c) => c.validate(),
            ModelConfig::Fno(c) => c.validate(),
        }
    }

    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            ModelConfig::Vit(c) => c.layout(),
            ModelConfig::Fno(c) => c.layout(),
        }
    }

    pub fn count_params(&self) -> usize {
        match self {
            ModelConfig::Vit(c) => c.count_params(),
            ModelConfig::Fno(c) => c.count_params(),
        }
    }

    /// Context length `k`.
    pub fn context(&self) -> usize {
        match self {
            ModelConfig::Vit(c) => c.context,
            ModelConfig::Fno(c) => c.context,
        }
    }

    pub fn spatial(&self) -> &[usize] {
        match self {
            ModelConfig::Vit(c) => &c.spatial,
            ModelConfig::Fno(c) => &c.spatial,
        }
    }

    /// Physical state channels predicted per step.
    pub fn state_channels(&self) -> usize {
        match self {
            ModelConfig::Vit(c) => c.out_channels,
            ModelConfig::Fno(c) => c.channels,
        }
    }

    /// Channels of each context frame: state, parameters, time.
    pub fn frame_channels(&self) -> usize {
        match self {
            ModelConfig::Vit(c) => c.in_channels,
            ModelConfig::Fno(c) => c.frame_channels,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, weights: &[Var], context: Var) -> Result<Var> {
        match self {
            ModelConfig::Vit(c) => vit::forward(g, c, weights, context),
            ModelConfig::Fno(c) => fno::forward(g, c, weights, context),
        }
    }
}

/// A configured architecture with its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
}

impl Model {
    /// Fresh weights drawn from the `init` stream of `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, "init");
        let params = match &config {
            ModelConfig::Vit(c) => c.init(&mut r),
            ModelConfig::Fno(c) => c.init(&mut r),
        };
        Ok(Model { config, params })
    }

    /// Pairs existing weights with a config, checking names and shapes.
    pub fn from_parts(config: ModelConfig, params: Params) -> Result<Self> {
        config.validate()?;
        params.check_layout(&config.layout())?;
        Ok(Model { config, params })
    }

    pub fn count_params(&self) -> usize {
        self.params.count()
    }

    /// Records the forward pass on `g`, borrowing the weights. Returns the
    /// prediction and the weight variables in layout order.
    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, context: Var, requires_grad: bool) -> Result<(Var, Vec<Var>)> {
        let w: Vec<Var> = self
            .params
            .tensors()
            .iter()
            .map(|t| g.param(t, requires_grad))
            .collect();
        let y = self.config.forward(g, &w, context)?;
        Ok((y, w))
    }

    /// Standardized next state for a standardized context window.
    pub fn predict(&self, context: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let c = g.leaf(context.clone(), false);
        let (y, _) = self.forward(&mut g, c, false)?;
        Ok(g.value(y).clone())
    }
}
