use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Each branch's attention masks the other branch's features.
    CrossAttention,
    /// Each branch's attention masks its own features.
    CbamPlain,
    /// Plain channel concatenation.
    ConcatOnly,
}

/// What the image branch sees for every image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImageBranchInput {
    /// Normalized image and light map (6 channels).
    Normalized,
    /// Normalized image, its gradient map and the light map (9 channels).
    NormalizedWithGradient,
    /// Gradient map and light map (6 channels).
    GradientOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub use_gradient_branch: bool,
    pub use_fusion: bool,
    pub fusion_mode: FusionMode,
    /// 0 keeps only the preprocessing module's output.
    pub hourglass_blocks: usize,
    pub base_channels: usize,
    pub gradient_branch_gets_lights: bool,
    pub image_branch_input: ImageBranchInput,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            use_gradient_branch: true,
            use_fusion: true,
            fusion_mode: FusionMode::CrossAttention,
            hourglass_blocks: 2,
            base_channels: 128,
            gradient_branch_gets_lights: false,
            image_branch_input: ImageBranchInput::Normalized,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 2 || !self.base_channels.is_multiple_of(2) {
            return Err(Error::BadParams(format!(
                "base_channels must be even and at least 2, got {}",
                self.base_channels
            )));
        }
        Ok(())
    }

    /// Fusion actually applied between the branches, if any.
    pub fn effective_fusion(&self) -> Option<FusionMode> {
        match (self.use_gradient_branch, self.use_fusion) {
            (false, _) => None,
            (true, false) => Some(FusionMode::ConcatOnly),
            (true, true) => Some(self.fusion_mode),
        }
    }

    pub fn image_input_channels(&self) -> usize {
        match self.image_branch_input {
            ImageBranchInput::Normalized | ImageBranchInput::GradientOnly => 6,
            ImageBranchInput::NormalizedWithGradient => 9,
        }
    }

    pub fn gradient_input_channels(&self) -> usize {
        if self.gradient_branch_gets_lights {
            6
        } else {
            3
        }
    }

    /// Channels of the aggregated volume fed to the regressor.
    pub fn aggregate_channels(&self) -> usize {
        if self.use_gradient_branch {
            4 * self.base_channels
        } else {
            self.base_channels
        }
    }

    /// Whether two configs build the same set of weights.
    pub fn same_architecture(&self, other: &NetConfig) -> bool {
        self.use_gradient_branch == other.use_gradient_branch
            && self.effective_fusion() == other.effective_fusion()
            && self.hourglass_blocks == other.hourglass_blocks
            && self.base_channels == other.base_channels
            && self.image_branch_input == other.image_branch_input
            && (!self.use_gradient_branch || self.gradient_branch_gets_lights == other.gradient_branch_gets_lights)
    }
}
