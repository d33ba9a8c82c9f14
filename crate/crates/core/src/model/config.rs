use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channels of the RGB images the network consumes and produces.
pub const IMAGE_CHANNELS: usize = 3;

/// Hyper-parameters of a SimpleIR network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Feature width `C` of the low-resolution trunk.
    pub base_channels: usize,
    /// Number of stacked feature iteration blocks.
    pub num_fibs: usize,
    /// Square depth-wise kernel of the local detail module.
    pub square_kernel: usize,
    /// Length of the `1 x k` / `k x 1` band kernels of the local detail module.
    pub band_kernel: usize,
    /// Bottleneck ratio of the channel-attention MLP.
    pub reduction: usize,
    /// Spatial down/up-sampling factor of the sub-pixel head and tail.
    pub down_factor: usize,
}

impl ModelConfig {
    /// Small network used for desk-scale training runs.
    pub const fn desk() -> Self {
        ModelConfig {
            base_channels: 16,
            num_fibs: 4,
            square_kernel: 3,
            band_kernel: 11,
            reduction: 4,
            down_factor: 4,
        }
    }

    /// Network sized so its parameter count lands near 4.6M.
    ///
    /// Found by scanning `(base_channels, num_fibs)` with [`crate::model::param_count`];
    /// see the `full_preset_search` test.
    pub const fn full() -> Self {
        ModelConfig {
            base_channels: 160,
            num_fibs: 11,
            square_kernel: 3,
            band_kernel: 11,
            reduction: 4,
            down_factor: 4,
        }
    }

    /// Smallest configuration worth gradient-checking end to end.
    pub const fn tiny() -> Self {
        ModelConfig {
            base_channels: 8,
            num_fibs: 2,
            square_kernel: 3,
            band_kernel: 5,
            reduction: 4,
            down_factor: 4,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown model preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.base_channels;
        if c == 0 || !c.is_multiple_of(4) {
            return Err(Error::Config(format!("base_channels {c} must be a positive multiple of 4")));
        }
        if self.reduction == 0 || !c.is_multiple_of(self.reduction) {
            return Err(Error::Config(format!(
                "reduction {} must divide base_channels {c}",
                self.reduction
            )));
        }
        for (name, k) in [("square_kernel", self.square_kernel), ("band_kernel", self.band_kernel)] {
            if k % 2 == 0 {
                return Err(Error::Config(format!("{name} must be odd, got {k}")));
            }
        }
        if self.down_factor == 0 {
            return Err(Error::Config("down_factor must be positive".into()));
        }
        Ok(())
    }

    /// Channel count after space-to-depth of an RGB image.
    pub fn packed_channels(&self) -> usize {
        IMAGE_CHANNELS * self.down_factor * self.down_factor
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}
