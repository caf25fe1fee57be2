use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One point of the architecture search space.
///
/// `num_windows` is the number of tiles per side, so a windowed block splits
/// the token grid into `num_windows²` groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelConfig {
    pub resolution: usize,
    pub patch_size: usize,
    pub num_windows: usize,
    pub num_decoder_layers: usize,
    pub num_queries: usize,
    #[serde(default)]
    pub mask_head_enabled: bool,
}

impl ModelConfig {
    pub fn grid_side(&self) -> usize {
        self.resolution / self.patch_size
    }

    pub fn num_tokens(&self) -> usize {
        let g = self.grid_side();
        g * g
    }

    pub fn window_count(&self) -> usize {
        self.num_windows * self.num_windows
    }

    pub fn mask_side(&self) -> usize {
        self.resolution / 4
    }

    /// Divisibility constraints that hold independently of any weights.
    pub fn check_shape(&self) -> Result<()> {
        if self.patch_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "patch size {} must be at least 2",
                self.patch_size
            )));
        }
        if self.resolution == 0 || !self.resolution.is_multiple_of(self.patch_size) {
            return Err(Error::InvalidConfig(format!(
                "resolution {} is not a multiple of patch size {}",
                self.resolution, self.patch_size
            )));
        }
        if !self.resolution.is_multiple_of(4) {
            return Err(Error::InvalidConfig(format!(
                "resolution {} is not a multiple of the mask stride 4",
                self.resolution
            )));
        }
        if self.num_windows == 0 || !self.grid_side().is_multiple_of(self.num_windows) {
            return Err(Error::InvalidConfig(format!(
                "token grid {} is not divisible into {} windows per side",
                self.grid_side(),
                self.num_windows
            )));
        }
        if self.num_queries == 0 || self.num_queries > self.num_tokens() {
            return Err(Error::InvalidConfig(format!(
                "{} queries requested from {} tokens",
                self.num_queries,
                self.num_tokens()
            )));
        }
        Ok(())
    }

    /// Full validity against the dimensions of a trained weight set.
    pub fn validate(&self, dims: &ModelDims) -> Result<()> {
        self.check_shape()?;
        if self.resolution > dims.max_resolution {
            return Err(Error::InvalidConfig(format!(
                "resolution {} exceeds the maximum {}",
                self.resolution, dims.max_resolution
            )));
        }
        if self.grid_side() > dims.pe_grid() {
            return Err(Error::InvalidConfig(format!(
                "token grid {} exceeds the positional table side {}",
                self.grid_side(),
                dims.pe_grid()
            )));
        }
        if self.num_decoder_layers > dims.max_decoder_layers {
            return Err(Error::InvalidConfig(format!(
                "{} decoder layers requested, weights hold {}",
                self.num_decoder_layers, dims.max_decoder_layers
            )));
        }
        if self.num_queries > dims.max_queries {
            return Err(Error::InvalidConfig(format!(
                "{} queries requested, maximum is {}",
                self.num_queries, dims.max_queries
            )));
        }
        Ok(())
    }
}

/// Fixed backbone dimensions shared by every sub-net.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub in_channels: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub encoder_depth: usize,
    pub max_decoder_layers: usize,
    pub max_queries: usize,
    pub num_classes: usize,
    /// Patch size the stored patch kernel is defined at.
    pub base_patch: usize,
    pub min_patch: usize,
    pub max_resolution: usize,
    pub mask_dim: usize,
    /// Frequencies per coordinate in the sine box embedding.
    pub pos_freqs: usize,
}

impl ModelDims {
    /// Small default sized for CPU training.
    pub fn toy(num_classes: usize) -> Self {
        Self {
            in_channels: 3,
            dim: 32,
            heads: 2,
            mlp_ratio: 2,
            encoder_depth: 4,
            max_decoder_layers: 3,
            max_queries: 16,
            num_classes,
            base_patch: 8,
            min_patch: 8,
            max_resolution: 96,
            mask_dim: 16,
            pos_freqs: 4,
        }
    }

    /// Side of the pre-allocated positional grid, `max_resolution / min_patch`.
    pub fn pe_grid(&self) -> usize {
        self.max_resolution / self.min_patch
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn hidden_dim(&self) -> usize {
        self.dim * self.mlp_ratio
    }

    pub fn box_embed_dim(&self) -> usize {
        8 * self.pos_freqs
    }

    /// Windowed (`true`) or global (`false`) attention per encoder block.
    pub fn window_layout(&self) -> Vec<bool> {
        window_layout(self.encoder_depth)
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad("dim must be a positive multiple of heads");
        }
        if self.base_patch < 2 || self.min_patch < 2 {
            return bad("patch sizes must be at least 2");
        }
        if !self.max_resolution.is_multiple_of(self.min_patch) {
            return bad("max_resolution must be a multiple of min_patch");
        }
        if self.encoder_depth == 0 || self.num_classes == 0 || self.max_queries == 0 {
            return bad("encoder depth, class count and query count must be positive");
        }
        Ok(())
    }
}

/// Reference windowed-block positions in a 12-block backbone.
pub const REFERENCE_WINDOWED_BLOCKS: [usize; 8] = [0, 1, 3, 4, 6, 7, 9, 10];
const REFERENCE_DEPTH: usize = 12;

/// Maps block `i` of a `depth`-block encoder onto the 12-block reference
/// placement with endpoints aligned, so the first block stays windowed and
/// the last stays global.
pub fn window_layout(depth: usize) -> Vec<bool> {
    (0..depth)
        .map(|i| {
            let j = if depth == 1 {
                REFERENCE_DEPTH - 1
            } else {
                (i as f64 * (REFERENCE_DEPTH - 1) as f64 / (depth - 1) as f64).round() as usize
            };
            REFERENCE_WINDOWED_BLOCKS.contains(&j)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(res: usize, patch: usize, win: usize) -> ModelConfig {
        ModelConfig {
            resolution: res,
            patch_size: patch,
            num_windows: win,
            num_decoder_layers: 2,
            num_queries: 4,
            mask_head_enabled: false,
        }
    }

    #[test]
    fn layout_matches_reference_at_full_depth() {
        let l = window_layout(12);
        let windowed: Vec<usize> = (0..12).filter(|&i| l[i]).collect();
        assert_eq!(windowed, REFERENCE_WINDOWED_BLOCKS);
    }

    #[test]
    fn shallow_layouts_keep_endpoints() {
        assert_eq!(window_layout(4), vec![true, true, true, false]);
        assert_eq!(window_layout(3), vec![true, true, false]);
        assert_eq!(window_layout(2), vec![true, false]);
        assert_eq!(window_layout(1), vec![false]);
    }

    #[test]
    fn shape_checks() {
        assert!(cfg(64, 16, 2).check_shape().is_ok());
        assert!(cfg(64, 16, 3).check_shape().is_err());
        assert!(cfg(250, 16, 1).check_shape().is_err());
        assert!(cfg(64, 1, 1).check_shape().is_err());
        let mut c = cfg(32, 16, 1);
        c.num_queries = 5;
        assert!(c.check_shape().is_err());
    }

    #[test]
    fn validate_against_dims() {
        let dims = ModelDims::toy(3);
        assert!(cfg(96, 8, 2).validate(&dims).is_ok());
        assert!(cfg(128, 8, 1).validate(&dims).is_err());
        let mut c = cfg(64, 8, 1);
        c.num_decoder_layers = 4;
        assert!(c.validate(&dims).is_err());
    }
}
