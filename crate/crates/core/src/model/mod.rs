//! Residual backbones: the single-branch baseline and the dual low/high
//! frequency network, plus analytical parameter, FLOP and memory counters.

mod backbone;
mod checkpoint;
mod cost;
mod dual;

pub use backbone::{BasicBlock, Branch, Classifier, ConvBn, Ctx, NetState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, ModelSpec};
pub use cost::{
    estimate_activation_memory, flops_forward, flops_train, ActivationMemory, CostModel, LayerCost,
    LayerKind,
};
pub use dual::{aggregate, Baseline, BranchSide, DualNet, DualOutput};

use crate::error::{Error, Result};

/// How the dual-branch backbone shrinks relative to the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ScalingMode {
    #[default]
    HalveBoth,
    HalveWidthOnly,
    HalveDepthOnly,
    Full,
}

impl ScalingMode {
    pub const ALL: [ScalingMode; 4] = [
        ScalingMode::HalveBoth,
        ScalingMode::HalveWidthOnly,
        ScalingMode::HalveDepthOnly,
        ScalingMode::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScalingMode::HalveBoth => "halve_both",
            ScalingMode::HalveWidthOnly => "halve_width_only",
            ScalingMode::HalveDepthOnly => "halve_depth_only",
            ScalingMode::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

/// How intermediate features cross between the two branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AggregatorVariant {
    /// Branches run independently until the classifier.
    NoIntegration,
    /// The high branch receives the sum; the low branch keeps its own features.
    LowDominance,
    /// The low branch receives the sum; the high branch keeps its own features.
    HighDominance,
    /// Both branches receive the sum.
    #[default]
    Mutual,
}

impl AggregatorVariant {
    pub const ALL: [AggregatorVariant; 4] = [
        AggregatorVariant::NoIntegration,
        AggregatorVariant::LowDominance,
        AggregatorVariant::HighDominance,
        AggregatorVariant::Mutual,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AggregatorVariant::NoIntegration => "no_integration",
            AggregatorVariant::LowDominance => "low_dominance",
            AggregatorVariant::HighDominance => "high_dominance",
            AggregatorVariant::Mutual => "mutual",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

/// Shape of the residual backbone. `base_width` and `blocks_per_stage`
/// describe the full-size network; the scaling mode derives the branch shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackboneConfig {
    pub base_width: usize,
    pub blocks_per_stage: [usize; 4],
    pub num_classes: usize,
    pub scaling_mode: ScalingMode,
    pub image_channels: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::resnet18(10)
    }
}

impl BackboneConfig {
    /// CIFAR-style ResNet18: width 64, two blocks per stage.
    pub fn resnet18(num_classes: usize) -> Self {
        Self {
            base_width: 64,
            blocks_per_stage: [2, 2, 2, 2],
            num_classes,
            scaling_mode: ScalingMode::Full,
            image_channels: 3,
        }
    }

    pub fn with_scaling(mut self, mode: ScalingMode) -> Self {
        self.scaling_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width < 1 {
            return Err(Error::config("backbone.base_width", "must be at least 1"));
        }
        if self.blocks_per_stage.iter().any(|&b| b < 1) {
            return Err(Error::config("backbone.blocks_per_stage", "every stage needs a block"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("backbone.num_classes", "need at least 2 classes"));
        }
        if self.image_channels < 1 {
            return Err(Error::config("backbone.image_channels", "must be at least 1"));
        }
        let (w, _) = self.branch_layout();
        if w < 1 {
            return Err(Error::config("backbone.base_width", "halved width rounds to zero"));
        }
        Ok(())
    }

    /// Width and per-stage block counts of one branch after scaling.
    pub fn branch_layout(&self) -> (usize, [usize; 4]) {
        let halve_blocks = self.blocks_per_stage.map(|b| (b / 2).max(1));
        match self.scaling_mode {
            ScalingMode::Full => (self.base_width, self.blocks_per_stage),
            ScalingMode::HalveBoth => (self.base_width / 2, halve_blocks),
            ScalingMode::HalveWidthOnly => (self.base_width / 2, self.blocks_per_stage),
            ScalingMode::HalveDepthOnly => (self.base_width, halve_blocks),
        }
    }
}
