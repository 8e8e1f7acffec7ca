use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel widths of every block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widths {
    /// Set-abstraction outputs; the last one is the 3D shape code.
    pub sa: [usize; 3],
    /// Widest 2D convolution; also the 2D shape code length.
    pub conv: usize,
    /// Fusion MLP width before pooling.
    pub fuse: usize,
    /// Global feature `v`.
    pub global: usize,
    /// Per-point features inside the decoder.
    pub decoder: usize,
    /// EdgeConv layer width in the offset predictor.
    pub edge: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input and output point count.
    pub n: usize,
    /// Sparse cloud `P0`.
    pub n0: usize,
    /// `P1` and `P2`.
    pub n1: usize,
    /// Split factor, `n == n1 * r`.
    pub r: usize,
    /// Square input image side.
    pub image_size: usize,
    /// Neighbourhood size for set-abstraction grouping.
    pub k_group: usize,
    /// Neighbourhood size for EdgeConv graphs.
    pub k_nn: usize,
    pub widths: Widths,
    pub use_attention: bool,
    /// Silhouettes are 1 channel; 3 accepts RGB renders.
    pub image_channels: usize,
    pub leaky_slope: f64,
}

impl ModelConfig {
    /// Sizes listed for the full-scale model.
    pub fn paper() -> Self {
        ModelConfig {
            n: 2048,
            n0: 256,
            n1: 512,
            r: 4,
            image_size: 224,
            k_group: 16,
            k_nn: 16,
            widths: Widths { sa: [128, 256, 512], conv: 256, fuse: 512, global: 512, decoder: 128, edge: 64 },
            use_attention: false,
            image_channels: 1,
            leaky_slope: 0.2,
        }
    }

    /// Reduced widths and sizes that train on one CPU core.
    pub fn desk() -> Self {
        ModelConfig {
            n: 512,
            n0: 64,
            n1: 128,
            r: 4,
            image_size: 64,
            k_group: 16,
            k_nn: 16,
            widths: Widths { sa: [32, 64, 128], conv: 32, fuse: 128, global: 128, decoder: 64, edge: 32 },
            use_attention: false,
            image_channels: 1,
            leaky_slope: 0.2,
        }
    }

    /// Smallest useful model, for gradient checks.
    pub fn toy() -> Self {
        ModelConfig {
            n: 32,
            n0: 8,
            n1: 16,
            r: 2,
            image_size: 16,
            k_group: 4,
            k_nn: 4,
            widths: Widths { sa: [8, 12, 16], conv: 8, fuse: 16, global: 16, decoder: 8, edge: 8 },
            use_attention: false,
            image_channels: 1,
            leaky_slope: 0.2,
        }
    }

    /// Centres after the first and second set abstraction.
    pub fn sa_centres(&self) -> (usize, usize) {
        ((self.n / 4).max(1), (self.n / 16).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.widths;
        let all = [w.sa[0], w.sa[1], w.sa[2], w.conv, w.fuse, w.global, w.decoder, w.edge];
        if all.contains(&0) || [self.n, self.n0, self.n1, self.r, self.image_size].contains(&0) {
            return Err(Error::Invalid("model sizes and widths must be positive".into()));
        }
        if self.n != self.n1 * self.r {
            return Err(Error::Invalid(format!("n = {} must equal n1 * r = {}", self.n, self.n1 * self.r)));
        }
        if self.n1 > self.n + self.n0 {
            return Err(Error::Invalid("n1 exceeds the points available to sample from".into()));
        }
        let (c1, _) = self.sa_centres();
        if self.k_group == 0 || self.k_group > c1 {
            return Err(Error::Invalid(format!("k_group = {} must be in 1..={c1}", self.k_group)));
        }
        if self.k_nn == 0 || self.k_nn > self.n {
            return Err(Error::Invalid(format!("k_nn = {} must be in 1..={}", self.k_nn, self.n)));
        }
        if w.conv < 4 {
            return Err(Error::Invalid("conv width must be at least 4".into()));
        }
        if self.image_channels != 1 && self.image_channels != 3 {
            return Err(Error::Invalid("image_channels must be 1 or 3".into()));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::Invalid("leaky_slope must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Channels of the eight 2D convolutions.
    pub fn conv_channels(&self) -> [usize; 8] {
        let c = self.widths.conv;
        [c / 4, c / 4, c / 2, c / 2, c, c, c, c]
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk()
    }
}
